"""Pinhole camera geometry and point-cloud primitives.

Conventions
-----------
* ``R, t`` map world to camera: ``X_cam = R @ X_world + t``.
* Camera frame: +X right, +Y down, +Z into the scene.
* Image frame: origin top-left, ``u`` is the column coordinate, ``v`` the
  row coordinate; integer ``(u, v)`` is the pixel at ``image[v, u]``.
* Depth is the camera-space Z coordinate, in whatever (relative) units the
  depth map uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (BehindCamera, EmptyObject, InvalidDepth, InvalidRotation,
                     OutOfBounds, ShapeMismatch)

ROTATION_TOL = 1e-6


def as_vec3(v) -> np.ndarray:
    """Coerce ``v`` to a finite float64 vector of length 3."""
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ShapeMismatch(f"expected 3 components, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a.tolist()}")
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @classmethod
    def default(cls, width: int, height: int) -> "CameraIntrinsics":
        """Generic pinhole used when no intrinsics are available."""
        f = float(max(width, height))
        return cls(f, f, width / 2.0, height / 2.0, int(width), int(height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def check_rotation(R, tol: float = ROTATION_TOL) -> np.ndarray:
    """Return ``R`` as a float64 array, raising `InvalidRotation` unless it is
    a proper rotation (orthonormal, det +1) within ``tol`` per entry."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise InvalidRotation(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotation("rotation has non-finite entries")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise InvalidRotation(f"R^T R deviates from identity by {err:.3g}")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotation(f"det(R) = {det:.6g}, expected 1")
    return R


@dataclass(frozen=True, eq=False)
class CameraPose:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = check_rotation(self.R)
        t = as_vec3(self.t)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))


@dataclass(frozen=True)
class CameraModel:
    intrinsics: CameraIntrinsics
    pose: CameraPose = field(default_factory=CameraPose)


@dataclass
class PointCloud:
    """Ordered 3D points with optional per-point colors and source pixels.

    ``points`` is ``(N, 3)`` float64, ``colors`` ``(N, 3)`` uint8 and
    ``source_pixels`` ``(N, 2)`` integer ``(u, v)``.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    source_pixels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != n:
                raise ShapeMismatch(f"{len(self.colors)} colors for {n} points")
        if self.source_pixels is not None:
            self.source_pixels = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
            if len(self.source_pixels) != n:
                raise ShapeMismatch(f"{len(self.source_pixels)} source pixels for {n} points")

    def __len__(self) -> int:
        return len(self.points)

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy(),
                          None if self.colors is None else self.colors.copy(),
                          None if self.source_pixels is None else self.source_pixels.copy())


def valid_depth(depth) -> np.ndarray:
    """Boolean map of pixels whose depth is finite and strictly positive."""
    d = np.asarray(depth)
    with np.errstate(invalid="ignore"):
        return np.isfinite(d) & (d > 0)


def world_to_camera(pose: CameraPose, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p @ pose.R.T + pose.t


def camera_to_world(pose: CameraPose, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return (p - pose.t) @ pose.R


def unproject(intr: CameraIntrinsics, pose: CameraPose, uv, depth) -> np.ndarray:
    """Vectorised unprojection of ``(N, 2)`` pixel coordinates with ``(N,)``
    depths to ``(N, 3)`` world points. No validation is performed."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depth, dtype=np.float64).reshape(-1)
    cam = np.empty((len(d), 3))
    cam[:, 0] = (uv[:, 0] - intr.cx) / intr.fx * d
    cam[:, 1] = (uv[:, 1] - intr.cy) / intr.fy * d
    cam[:, 2] = d
    return camera_to_world(pose, cam)


def project(intr: CameraIntrinsics, pose: CameraPose, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection of world points.

    Returns ``(uv, z)``: ``(N, 2)`` pixel coordinates and ``(N,)`` camera
    depths. Rows with ``z <= 0`` carry meaningless ``uv``; callers filter.
    """
    cam = world_to_camera(pose, np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([intr.fx * cam[:, 0] / z + intr.cx,
                       intr.fy * cam[:, 1] / z + intr.cy], axis=1)
    return uv, z


def unproject_pixel(intr: CameraIntrinsics, pose: CameraPose, pixel, depth: float) -> np.ndarray:
    """Lift one pixel at the given camera depth to a world-space point."""
    depth = float(depth)
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"depth must be finite and positive, got {depth}")
    u, v = (float(c) for c in pixel)
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    return unproject(intr, pose, [[u, v]], [depth])[0]


def project_point(intr: CameraIntrinsics, pose: CameraPose, p) -> tuple[tuple[float, float], float]:
    """Project one world point; returns ``((u, v), camera_depth)``.

    The pixel may fall outside the image; clipping is the caller's job.
    """
    uv, z = project(intr, pose, as_vec3(p)[None])
    if not z[0] > 0:
        raise BehindCamera(f"camera-space Z = {z[0]:.6g}")
    return (float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def unproject_masked(image, mask, depth, intr: CameraIntrinsics, pose: CameraPose,
                     *, key=None) -> PointCloud:
    """Unproject every masked pixel with valid depth, in row-major order.

    ``image`` may be ``None``, in which case the cloud carries no colors.
    """
    mask = np.asarray(mask, dtype=bool)
    depth = np.asarray(depth)
    if mask.shape != depth.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs depth {depth.shape}")
    if image is not None:
        image = np.asarray(image)
        if image.shape[:2] != depth.shape:
            raise ShapeMismatch(f"image {image.shape[:2]} vs depth {depth.shape}")
    if depth.shape != (intr.height, intr.width):
        raise ShapeMismatch(f"depth {depth.shape} vs camera {intr.height}x{intr.width}")
    rows, cols = np.nonzero(mask & valid_depth(depth))
    if len(rows) == 0:
        raise EmptyObject("no masked pixel with valid depth", key=key)
    uv = np.stack([cols, rows], axis=1)
    pts = unproject(intr, pose, uv, depth[rows, cols])
    colors = None if image is None else image[rows, cols, :3]
    return PointCloud(pts, colors, uv)


def translate_cloud(cloud: PointCloud, delta) -> PointCloud:
    """Rigidly shift every point by ``delta``; attributes and order are kept."""
    d = as_vec3(delta)
    return PointCloud(cloud.points + d, cloud.colors, cloud.source_pixels)


def _points_of(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    return pts.reshape(-1, 3)


def representative_coordinate(cloud) -> np.ndarray:
    """Coordinate-wise median; even counts take the midpoint of the two
    central order statistics."""
    pts = _points_of(cloud)
    if len(pts) == 0:
        raise EmptyObject("cannot take the median of an empty cloud")
    return np.median(pts, axis=0)


def displacement(c_i, c_j) -> float:
    """Euclidean distance between two representative coordinates."""
    d = as_vec3(c_i) - as_vec3(c_j)
    return float(np.sqrt(d @ d))


def scene_diagonal(cloud) -> float:
    """Length of the axis-aligned bounding-box diagonal."""
    pts = _points_of(cloud)
    if len(pts) == 0:
        raise EmptyObject("cannot take the diagonal of an empty cloud")
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(np.sqrt(ext @ ext))
