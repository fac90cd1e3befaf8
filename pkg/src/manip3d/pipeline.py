"""Dataset curation stages: camera-static clip detection, depth-aware frame
pair selection and displacement filtering."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyObject, InsufficientFrames
from .geometry import (CameraModel, representative_coordinate, scene_diagonal,
                       unproject_masked)

NOISE = -1
DEFAULT_SHORT_CLIP = 16
DEFAULT_MIN_TOTAL = 0.05
DEFAULT_MIN_DEPTH_AXIS = 0.02


@dataclass(frozen=True)
class DBSCANParams:
    eps: float
    min_samples: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if int(self.min_samples) < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")


def normalize_tokens(tokens) -> np.ndarray:
    """Scale each token to unit length (zero rows are left as zeros)."""
    x = np.asarray(tokens, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def dbscan(tokens, params: DBSCANParams) -> np.ndarray:
    """Density-based clustering of per-frame camera tokens.

    Neighbourhoods are Euclidean balls of radius ``eps`` (inclusive) that
    contain the point itself. Points are visited in index order; cluster
    ids are assigned from 0 in order of discovery and a border point joins
    the first cluster that reaches it. Noise is labelled -1.
    """
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"tokens must be a non-empty 2D array, got shape {x.shape}")
    n = len(x)
    neighbours = cKDTree(x).query_ball_point(x, r=params.eps, p=2.0, return_sorted=True)
    core = np.fromiter((len(nb) >= params.min_samples for nb in neighbours), bool, n)

    labels = np.full(n, NOISE, dtype=np.int64)
    next_id = 0
    for start in range(n):
        if labels[start] != NOISE or not core[start]:
            continue
        labels[start] = next_id
        frontier = deque([start])
        while frontier:
            p = frontier.popleft()
            for q in neighbours[p]:
                if labels[q] == NOISE:
                    labels[q] = next_id
                    if core[q]:
                        frontier.append(q)
        next_id += 1
    return labels


class Clip(NamedTuple):
    """Inclusive frame range ``[start, end]`` inside cluster ``label``."""

    start: int
    end: int
    label: int

    def __len__(self) -> int:  # type: ignore[override]
        return self.end - self.start + 1


def static_clips(labels: Sequence[int], min_run: int = 1) -> list[Clip]:
    """Maximal temporally contiguous runs of one cluster label, at least
    ``min_run`` frames long, sorted by start frame. Noise is skipped."""
    if min_run < 1:
        raise ValueError(f"min_run must be >= 1, got {min_run}")
    labels = [int(v) for v in labels]
    clips = []
    start = 0
    for k in range(1, len(labels) + 1):
        if k == len(labels) or labels[k] != labels[start]:
            if labels[start] != NOISE and k - start >= min_run:
                clips.append(Clip(start, k - 1, labels[start]))
            start = k
    return clips


@dataclass
class FrameRecord:
    frame_index: int
    depth: np.ndarray
    mask: np.ndarray
    camera: CameraModel
    image: np.ndarray | None = None


@dataclass
class PairSelection:
    """Chosen frame pair. ``displacement`` and ``delta`` are in depth-map
    units; ``scene_diagonal`` is the normalising length used by filters."""

    i: int
    j: int
    displacement: float
    delta: np.ndarray
    short_clip_rule_used: bool
    centroid_i: np.ndarray | None = None
    centroid_j: np.ndarray | None = None
    scene_diagonal: float = 1.0

    @property
    def normalized_displacement(self) -> float:
        return self.displacement / self.scene_diagonal

    @property
    def normalized_delta(self) -> np.ndarray:
        return self.delta / self.scene_diagonal


def farthest_pair(centroids) -> tuple[int, int, float]:
    """Positions ``(a, b)``, ``a < b``, of the two most distant centroids.

    Ties go to the smallest ``a``, then the smallest ``b``.
    """
    c = np.asarray(centroids, dtype=np.float64)
    if len(c) < 2:
        raise InsufficientFrames(f"need at least 2 frames, got {len(c)}")
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist[np.tril_indices(len(c))] = -np.inf
    flat = int(np.argmax(dist))
    a, b = divmod(flat, len(c))
    return a, b, float(dist[a, b])


def select_pair_from_centroids(centroids, frame_indices: Sequence[int] | None = None,
                               short_clip_threshold: int = DEFAULT_SHORT_CLIP,
                               scene_diag: float = 1.0) -> PairSelection:
    """Pair selection given per-frame representative coordinates."""
    c = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    k = len(c)
    if k < 2:
        raise InsufficientFrames(f"need at least 2 frames, got {k}")
    idx = list(range(k)) if frame_indices is None else [int(f) for f in frame_indices]
    if k <= short_clip_threshold:
        a, b, short = 0, k - 1, True
    else:
        a, b, _ = farthest_pair(c)
        short = False
    delta = c[b] - c[a]
    return PairSelection(idx[a], idx[b], float(np.sqrt(delta @ delta)), delta, short,
                         c[a].copy(), c[b].copy(), float(scene_diag))


def frame_centroid(frame: FrameRecord) -> np.ndarray:
    cam = frame.camera
    cloud = unproject_masked(frame.image, frame.mask, frame.depth, cam.intrinsics, cam.pose,
                             key=frame.frame_index)
    return representative_coordinate(cloud)


def frame_scene_diagonal(frame: FrameRecord) -> float:
    cam = frame.camera
    cloud = unproject_masked(None, np.ones(np.shape(frame.depth), bool), frame.depth,
                             cam.intrinsics, cam.pose, key=frame.frame_index)
    return scene_diagonal(cloud)


def select_pair(frames: Sequence[FrameRecord],
                short_clip_threshold: int = DEFAULT_SHORT_CLIP) -> PairSelection:
    """Pick the frame pair with the largest object displacement.

    Clips of at most ``short_clip_threshold`` frames use their first and
    last frames. Frames are taken in ``frame_index`` order. The scene
    diagonal for normalised filtering comes from the first frame.
    """
    frames = sorted(frames, key=lambda f: f.frame_index)
    if len(frames) < 2:
        raise InsufficientFrames(f"need at least 2 frames, got {len(frames)}")
    centroids = []
    for f in frames:
        try:
            centroids.append(frame_centroid(f))
        except EmptyObject:
            raise EmptyObject("frame has no valid masked pixels", key=f.frame_index) from None
    diag = frame_scene_diagonal(frames[0])
    return select_pair_from_centroids(centroids, [f.frame_index for f in frames],
                                      short_clip_threshold, diag if diag > 0 else 1.0)


def depth_filter(selection: PairSelection, min_total: float = DEFAULT_MIN_TOTAL,
                 min_depth_axis: float = DEFAULT_MIN_DEPTH_AXIS) -> bool:
    """Keep a pair only if its total displacement and its depth-axis
    displacement both reach their thresholds (scene-diagonal units)."""
    if min_total < 0 or min_depth_axis < 0:
        raise ValueError("thresholds must be non-negative")
    return bool(selection.normalized_displacement >= min_total
                and abs(selection.normalized_delta[2]) >= min_depth_axis)
