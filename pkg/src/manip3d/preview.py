"""Depth-aware preview rendering of translated objects.

Each requested object is lifted to 3D with the scene depth, shifted by its
translation vector and forward-splatted back into the source view. The
source regions are erased first, so a moved object can be seen against the
rest of the scene and can be hidden behind nearer scene content.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import BehindCamera, EmptyObject, MaskOverlap, ShapeMismatch
from .geometry import (CameraIntrinsics, CameraPose, PointCloud, as_vec3,
                       project, scene_diagonal, translate_cloud, unproject_masked,
                       valid_depth)

MAX_SPLAT_RADIUS = 8
DEFAULT_FILL = (128, 128, 128)
# z_test_epsilon default, as a fraction of the scene bounding-box diagonal
RELATIVE_Z_EPSILON = 1e-4


class ErasePolicy(str, enum.Enum):
    LEAVE = "leave"
    FILL_BACKGROUND_ESTIMATE = "fill_background_estimate"
    FILL_FLAT_COLOR = "fill_flat_color"


@dataclass(frozen=True)
class PreviewConfig:
    """Rendering knobs.

    ``z_test_epsilon=None`` resolves to 1e-4 of the scene diagonal at render
    time. ``background_color`` is the flat fill color.
    """

    splat_radius: int = 1
    z_test_epsilon: float | None = None
    erase_policy: ErasePolicy = ErasePolicy.FILL_FLAT_COLOR
    background_color: tuple[int, int, int] = DEFAULT_FILL

    def __post_init__(self):
        if not 0 <= int(self.splat_radius) <= MAX_SPLAT_RADIUS:
            raise ValueError(f"splat_radius must be in [0, {MAX_SPLAT_RADIUS}], got {self.splat_radius}")
        if self.z_test_epsilon is not None and not self.z_test_epsilon >= 0:
            raise ValueError(f"z_test_epsilon must be >= 0, got {self.z_test_epsilon}")
        object.__setattr__(self, "erase_policy", ErasePolicy(self.erase_policy))
        color = tuple(int(c) for c in self.background_color)
        if len(color) != 3 or not all(0 <= c <= 255 for c in color):
            raise ValueError(f"background_color must be an RGB8 triple, got {self.background_color}")
        object.__setattr__(self, "background_color", color)


@dataclass
class ManipulationRequest:
    object_id: str
    mask: np.ndarray
    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.delta = as_vec3(self.delta)


def depth_buffer(scene_depth) -> np.ndarray:
    """Float64 z-buffer from a depth map; invalid pixels become +inf."""
    d = np.asarray(scene_depth, dtype=np.float64)
    return np.where(valid_depth(d), d, np.inf)


def _footprint(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=1)


def splat(cloud: PointCloud, intr: CameraIntrinsics, pose: CameraPose, canvas, zbuf,
          cfg: PreviewConfig, *, z_test_epsilon: float | None = None):
    """Forward-splat a colored cloud into ``canvas`` with a z-test.

    Each point covers the ``(2r+1)^2`` square around its projection rounded
    half up.
    A candidate passes at a pixel when its depth is below
    ``zbuf - epsilon``; among passing candidates the nearest wins, ties go
    to the lower point index. Returns new ``(canvas, zbuf)`` arrays.
    """
    canvas = np.array(canvas, dtype=np.uint8, copy=True)
    zbuf = np.array(zbuf, dtype=np.float64, copy=True)
    if canvas.shape[:2] != zbuf.shape:
        raise ShapeMismatch(f"canvas {canvas.shape[:2]} vs zbuf {zbuf.shape}")
    if len(cloud) == 0:
        return canvas, zbuf
    if cloud.colors is None:
        raise ValueError("splatting needs a colored cloud")
    eps = cfg.z_test_epsilon if z_test_epsilon is None else z_test_epsilon
    eps = 0.0 if eps is None else float(eps)
    h, w = zbuf.shape

    uv, z = project(intr, pose, cloud.points)
    front = z > 0
    idx = np.nonzero(front)[0]
    if len(idx) == 0:
        return canvas, zbuf
    pix = np.floor(uv[idx] + 0.5).astype(np.int64)  # round half up
    depth = z[idx]

    off = _footprint(int(cfg.splat_radius))
    cu = (pix[:, None, 0] + off[None, :, 0]).ravel()
    cv = (pix[:, None, 1] + off[None, :, 1]).ravel()
    cidx = np.repeat(idx, len(off))
    cdepth = np.repeat(depth, len(off))

    inside = (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
    cu, cv, cidx, cdepth = cu[inside], cv[inside], cidx[inside], cdepth[inside]
    flat = cv * w + cu
    passed = cdepth < zbuf.ravel()[flat] - eps
    flat, cidx, cdepth = flat[passed], cidx[passed], cdepth[passed]
    if len(flat) == 0:
        return canvas, zbuf

    order = np.lexsort((cidx, cdepth, flat))
    flat, cidx, cdepth = flat[order], cidx[order], cdepth[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    win, wpt, wdepth = flat[first], cidx[first], cdepth[first]

    canvas.reshape(-1, canvas.shape[-1])[win, :3] = cloud.colors[wpt]
    zbuf.reshape(-1)[win] = wdepth
    return canvas, zbuf


def erase(src, region, policy: ErasePolicy, color=DEFAULT_FILL) -> np.ndarray:
    """Return a copy of ``src`` with ``region`` erased according to ``policy``.

    ``fill_background_estimate`` copies the nearest pixel outside the region
    (Euclidean distance transform; ties resolved by scipy's scan order).
    """
    out = np.array(src, dtype=np.uint8, copy=True)
    region = np.asarray(region, dtype=bool)
    policy = ErasePolicy(policy)
    if policy is ErasePolicy.LEAVE or not region.any():
        return out
    if policy is ErasePolicy.FILL_FLAT_COLOR or region.all():
        out[region] = np.asarray(color, dtype=np.uint8)
        return out
    _, (ri, ci) = ndimage.distance_transform_edt(region, return_indices=True)
    out[region] = out[ri[region], ci[region]]
    return out


def render_preview(src, scene_depth, intr: CameraIntrinsics, pose: CameraPose,
                   requests: list[ManipulationRequest], cfg: PreviewConfig | None = None,
                   *, return_clouds: bool = False):
    """Render the 3D-aware preview image for one or more object translations.

    Requests are processed in ``object_id`` order, so the output does not
    depend on the order of ``requests``. With ``return_clouds=True`` the
    translated clouds are returned alongside the image, keyed by object id.
    """
    cfg = cfg or PreviewConfig()
    src = np.asarray(src, dtype=np.uint8)
    depth = np.asarray(scene_depth)
    if src.ndim != 3 or src.shape[2] != 3:
        raise ShapeMismatch(f"source image must be HxWx3, got {src.shape}")
    if depth.shape != src.shape[:2]:
        raise ShapeMismatch(f"depth {depth.shape} vs image {src.shape[:2]}")
    if not requests:
        raise ValueError("at least one manipulation request is required")
    ids = [r.object_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate object ids in {ids}")
    requests = sorted(requests, key=lambda r: str(r.object_id))

    union = np.zeros(src.shape[:2], dtype=bool)
    for r in requests:
        if r.mask.shape != src.shape[:2]:
            raise ShapeMismatch(f"mask of {r.object_id!r} is {r.mask.shape}, image is {src.shape[:2]}")
        if (union & r.mask).any():
            raise MaskOverlap(f"mask of {r.object_id!r} overlaps another request")
        union |= r.mask

    clouds = {}
    for r in requests:
        cloud = unproject_masked(src, r.mask, depth, intr, pose, key=r.object_id)
        moved = translate_cloud(cloud, r.delta)
        _, z = project(intr, pose, moved.points)
        if not (z > 0).any():
            raise BehindCamera("translated object is entirely behind the camera", key=r.object_id)
        clouds[r.object_id] = moved

    eps = cfg.z_test_epsilon
    if eps is None:
        scene = unproject_masked(None, np.ones(depth.shape, bool), depth, intr, pose)
        eps = RELATIVE_Z_EPSILON * scene_diagonal(scene)

    canvas = erase(src, union, cfg.erase_policy, cfg.background_color)
    zbuf = depth_buffer(depth)
    zbuf[union] = np.inf
    merged = PointCloud(np.concatenate([c.points for c in clouds.values()]),
                        np.concatenate([c.colors for c in clouds.values()]))
    canvas, _ = splat(merged, intr, pose, canvas, zbuf, cfg, z_test_epsilon=eps)
    if return_clouds:
        return canvas, clouds
    return canvas
