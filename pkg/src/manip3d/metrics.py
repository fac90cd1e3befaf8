"""Object-manipulation evaluation metrics.

2D placement (DIoU, mask IoU), depth accuracy (AbsRel, delta-1.25, SILog),
3D placement (Chamfer, centroid distance), relocation-aware DINO
similarity, the missing-object penalty and the batch evaluation protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateBox, DegenerateScene, EmptyObject, EmptyRegion,
                     EmptySample, InvalidDepth, ShapeMismatch)
from .geometry import PointCloud, as_vec3, scene_diagonal, valid_depth

METRICS = ("diou", "mask_iou", "absrel", "delta_1_25", "chamfer", "centroid", "ra_dino")
DISTANCE_METRICS = ("absrel", "chamfer", "centroid")
ACCURACY_METRICS = ("diou", "mask_iou", "delta_1_25", "ra_dino")
# raw scores assigned to accuracy-style metrics of an object that was not found
MISSING_ACCURACY = {"diou": -1.0, "mask_iou": 0.0, "delta_1_25": 0.0, "ra_dino": 0.0}


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box corners out of order: {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def diou(pred: BoundingBox, gt: BoundingBox) -> float:
    """Distance-IoU: IoU minus squared center distance over the squared
    diagonal of the smallest enclosing box."""
    if gt.area <= 0:
        raise DegenerateBox(f"ground-truth box has zero area: {gt.as_list()}")
    iw = max(0.0, min(pred.x_max, gt.x_max) - max(pred.x_min, gt.x_min))
    ih = max(0.0, min(pred.y_max, gt.y_max) - max(pred.y_min, gt.y_min))
    inter = iw * ih
    iou = inter / (pred.area + gt.area - inter)
    (px, py), (gx, gy) = pred.center, gt.center
    rho2 = (px - gx) ** 2 + (py - gy) ** 2
    cw = max(pred.x_max, gt.x_max) - min(pred.x_min, gt.x_min)
    ch = max(pred.y_max, gt.y_max) - min(pred.y_min, gt.y_min)
    return iou - rho2 / (cw * cw + ch * ch)


def mask_iou(pred, gt) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred mask {pred.shape} vs gt mask {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 0.0
    return np.count_nonzero(pred & gt) / union


def valid_region(pred, gt, region) -> np.ndarray:
    """Pixels of ``region`` where both depth maps are valid."""
    pred, gt, region = np.asarray(pred), np.asarray(gt), np.asarray(region, dtype=bool)
    if not (pred.shape == gt.shape == region.shape):
        raise ShapeMismatch(f"pred {pred.shape}, gt {gt.shape}, region {region.shape}")
    return region & valid_depth(pred) & valid_depth(gt)


def _region_values(pred, gt, region):
    omega = valid_region(pred, gt, region)
    if not omega.any():
        raise EmptyRegion("no valid pixels in the evaluation region")
    return (np.asarray(pred, dtype=np.float64)[omega],
            np.asarray(gt, dtype=np.float64)[omega])


def absrel(pred, gt, region) -> float:
    """Mean absolute relative depth error over the valid region."""
    p, g = _region_values(pred, gt, region)
    return float(np.mean(np.abs(p - g) / g))


def delta_ratio(pred, gt, region, threshold: float = 1.25) -> float:
    """Fraction of valid pixels with ``max(p/g, g/p) < threshold``."""
    p, g = _region_values(pred, gt, region)
    ratio = np.maximum(p / g, g / p)
    return float(np.count_nonzero(ratio < threshold) / len(ratio))


def silog(pred, gt, region) -> float:
    """Scale-invariant log error: variance of the log-depth residual.

    Every pixel of ``region`` is used; a non-positive or non-finite depth
    there raises `InvalidDepth`.
    """
    pred, gt, region = np.asarray(pred), np.asarray(gt), np.asarray(region, dtype=bool)
    if not (pred.shape == gt.shape == region.shape):
        raise ShapeMismatch(f"pred {pred.shape}, gt {gt.shape}, region {region.shape}")
    if not region.any():
        raise EmptyRegion("empty SILog region")
    p = pred[region].astype(np.float64)
    g = gt[region].astype(np.float64)
    if not (valid_depth(p).all() and valid_depth(g).all()):
        raise InvalidDepth("SILog region contains non-positive or non-finite depth")
    d = np.log(p) - np.log(g)
    n = len(d)
    # centered form; algebraically mean(d^2) - mean(d)^2, without cancellation
    val = float(np.sum((d - d.sum() / n) ** 2) / n)
    return max(val, 0.0)


def _cloud_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyObject("empty point cloud")
    return pts


def _check_diagonal(norm_diagonal: float) -> float:
    norm_diagonal = float(norm_diagonal)
    if not (math.isfinite(norm_diagonal) and norm_diagonal > 0):
        raise DegenerateScene(f"normalisation diagonal must be positive, got {norm_diagonal}")
    return norm_diagonal


def nearest_distances(query, reference) -> np.ndarray:
    """Distance from each query point to its nearest reference point."""
    d, _ = cKDTree(reference).query(query, k=1)
    return d


def nearest_distances_bruteforce(query, reference, block: int = 1024) -> np.ndarray:
    """O(N*M) nearest-neighbour distances, evaluated in blocks."""
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    out = np.empty(len(query))
    for s in range(0, len(query), block):
        diff = query[s:s + block, None, :] - reference[None, :, :]
        out[s:s + block] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def chamfer(pred, gt, norm_diagonal: float, *, accelerated: bool = True) -> float:
    """Symmetric Chamfer distance (sum of the two mean nearest-neighbour
    distances) between clouds scaled by ``1 / norm_diagonal``."""
    diag = _check_diagonal(norm_diagonal)
    p = _cloud_points(pred) / diag
    g = _cloud_points(gt) / diag
    nn = nearest_distances if accelerated else nearest_distances_bruteforce
    return float(np.mean(nn(p, g)) + np.mean(nn(g, p)))


def centroid_distance(pred, gt, norm_diagonal: float) -> float:
    diag = _check_diagonal(norm_diagonal)
    c = np.mean(_cloud_points(pred) / diag, axis=0) - np.mean(_cloud_points(gt) / diag, axis=0)
    return float(np.sqrt(c @ c))


@dataclass(frozen=True)
class RelocationPair:
    v_pred: np.ndarray
    v_gt: np.ndarray
    alpha: float = 1.0
    beta: float = 0.8
    epsilon: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "v_pred", as_vec3(self.v_pred))
        object.__setattr__(self, "v_gt", as_vec3(self.v_gt))
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def relocation_errors(rel: RelocationPair) -> tuple[float, float]:
    """Parallel and orthogonal relative errors ``(e_par, e_perp)``."""
    v, g = rel.v_pred, rel.v_gt
    g2 = float(g @ g)
    v_par = (float(v @ g) / g2) * g if g2 > 0 else np.zeros(3)
    v_perp = v - v_par
    denom = math.sqrt(g2) + rel.epsilon
    return float(np.linalg.norm(v_par - g)) / denom, float(np.linalg.norm(v_perp)) / denom


def ra_dino(s_dino: float, rel: RelocationPair) -> float:
    """DINO similarity damped by relocation-vector errors."""
    if not 0.0 <= s_dino <= 1.0:
        raise ValueError(f"DINO similarity must be in [0, 1], got {s_dino}")
    e_par, e_perp = relocation_errors(rel)
    return float(s_dino * math.exp(-rel.alpha * e_par - rel.beta * e_perp))


@dataclass(frozen=True)
class PenaltyPolicy:
    q_hi: float = 0.99
    q_mid: float = 0.95
    multiplier: float = 1.2

    def __post_init__(self):
        if not 0 < self.q_mid <= self.q_hi <= 1:
            raise ValueError(f"need 0 < q_mid <= q_hi <= 1, got {self.q_mid}, {self.q_hi}")
        if self.multiplier < 1:
            raise ValueError(f"multiplier must be >= 1, got {self.multiplier}")


def missing_penalty(observed: Sequence[float], policy: PenaltyPolicy = PenaltyPolicy()) -> float:
    """``max(q_hi quantile, multiplier * q_mid quantile)`` of the observed
    distances, with linearly interpolated empirical quantiles."""
    x = np.asarray(observed, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise EmptySample("no localized objects to derive a penalty from")
    hi, mid = np.quantile(x, [policy.q_hi, policy.q_mid], method="linear")
    return float(max(hi, policy.multiplier * mid))


def _default_ranges() -> dict[str, tuple[float, float]]:
    return {
        "diou": (-1.0, 1.0),
        "mask_iou": (0.0, 1.0),
        "delta_1_25": (0.0, 1.0),
        "ra_dino": (0.0, 1.0),
        "absrel": (0.0, 2.0),
        "chamfer": (0.0, 0.5),
        "centroid": (0.0, 0.5),
    }


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-metric linear map onto [0, 100] with clamping.

    ``ranges[m] = (raw_at_0, raw_at_100)``. Distance metrics map raw 0 to
    0, so lower stays better after normalisation.
    """

    ranges: Mapping[str, tuple[float, float]] = field(default_factory=_default_ranges)

    def __post_init__(self):
        merged = _default_ranges()
        for k, v in dict(self.ranges).items():
            if k not in merged:
                raise ValueError(f"unknown metric {k!r}")
            lo, hi = (float(x) for x in v)
            if lo == hi or not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"degenerate normalisation range for {k}: {v}")
            merged[k] = (lo, hi)
        object.__setattr__(self, "ranges", merged)

    def normalize(self, metric: str, value: float) -> float:
        lo, hi = self.ranges[metric]
        return float(min(100.0, max(0.0, 100.0 * (value - lo) / (hi - lo))))

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.ranges.items()}


@dataclass
class ObjectEvalInput:
    """Everything needed to score one manipulated object.

    When ``localized`` is false only ``item_id``/``object_id`` are used.
    """

    item_id: str
    object_id: str
    localized: bool
    pred_box: BoundingBox | None = None
    gt_box: BoundingBox | None = None
    pred_mask: np.ndarray | None = None
    gt_mask: np.ndarray | None = None
    pred_depth: np.ndarray | None = None
    gt_depth: np.ndarray | None = None
    pred_cloud: PointCloud | None = None
    gt_cloud: PointCloud | None = None
    scene_cloud_gt: PointCloud | None = None
    dino_similarity: float | None = None
    relocation: RelocationPair | None = None
    deqa: float | None = None
    phys_vlm: float | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (str(self.item_id), str(self.object_id))


@dataclass
class MetricReport:
    item_id: str
    object_id: str
    raw: dict[str, float]
    normalized: dict[str, float]
    penalty_applied: dict[str, bool] = field(default_factory=dict)
    deqa: float | None = None
    phys_vlm: float | None = None
    count: int = 1

    @property
    def key(self) -> tuple[str, str]:
        return (str(self.item_id), str(self.object_id))


def raw_metrics(inp: ObjectEvalInput) -> dict[str, float]:
    """The seven geometric metrics of a localized object."""
    diag = scene_diagonal(inp.scene_cloud_gt)
    return {
        "diou": diou(inp.pred_box, inp.gt_box),
        "mask_iou": mask_iou(inp.pred_mask, inp.gt_mask),
        "absrel": absrel(inp.pred_depth, inp.gt_depth, inp.gt_mask),
        "delta_1_25": delta_ratio(inp.pred_depth, inp.gt_depth, inp.gt_mask),
        "chamfer": chamfer(inp.pred_cloud, inp.gt_cloud, diag),
        "centroid": centroid_distance(inp.pred_cloud, inp.gt_cloud, diag),
        "ra_dino": ra_dino(inp.dino_similarity, inp.relocation),
    }


def finalize_report(item_id, object_id, raw: Mapping[str, float], norm: NormalizationSpec,
                    penalty_applied: Mapping[str, bool] | None = None,
                    deqa=None, phys_vlm=None) -> MetricReport:
    penalty_applied = {m: bool((penalty_applied or {}).get(m, False)) for m in DISTANCE_METRICS}
    return MetricReport(str(item_id), str(object_id), {m: float(raw[m]) for m in METRICS},
                        {m: norm.normalize(m, raw[m]) for m in METRICS},
                        penalty_applied, deqa, phys_vlm)


def batch_penalties(observed: Mapping[str, Sequence[float]], policy: PenaltyPolicy,
                    fallback: float | None = None) -> dict[str, float]:
    """Penalty per distance metric; ``fallback`` covers metrics with no
    localized observations, otherwise `EmptySample` propagates."""
    out = {}
    for m in DISTANCE_METRICS:
        try:
            out[m] = missing_penalty(observed.get(m, ()), policy)
        except EmptySample:
            if fallback is None:
                raise EmptySample(f"no localized {m} values and no fallback penalty configured") from None
            out[m] = float(fallback)
    return out


def evaluate_object(inp: ObjectEvalInput, policy: PenaltyPolicy = PenaltyPolicy(),
                    norm: NormalizationSpec = NormalizationSpec(), *,
                    batch_observed: Mapping[str, Sequence[float]] | None = None,
                    penalties: Mapping[str, float] | None = None,
                    fallback: float | None = None) -> MetricReport:
    """Score one object.

    A non-localized object needs the batch context: either precomputed
    ``penalties`` or the localized ``batch_observed`` distance values from
    which they are derived.
    """
    if inp.localized:
        return finalize_report(inp.item_id, inp.object_id, raw_metrics(inp), norm,
                               deqa=inp.deqa, phys_vlm=inp.phys_vlm)
    if penalties is None:
        penalties = batch_penalties(batch_observed or {}, policy, fallback)
    raw = dict(MISSING_ACCURACY)
    raw.update({m: penalties[m] for m in DISTANCE_METRICS})
    return finalize_report(inp.item_id, inp.object_id, raw, norm,
                           {m: True for m in DISTANCE_METRICS}, inp.deqa, inp.phys_vlm)


def evaluate_batch(inputs: Iterable[ObjectEvalInput], policy: PenaltyPolicy = PenaltyPolicy(),
                   norm: NormalizationSpec = NormalizationSpec(), *, fallback: float | None = None,
                   map_fn=map) -> tuple[list[MetricReport], dict[str, float] | None]:
    """Two-phase batch evaluation.

    Localized objects are scored first (through ``map_fn``, which may be a
    parallel map that preserves order); their distance values then define
    the penalty for the objects that were not found. Reports come back
    sorted by ``(item_id, object_id)``. The penalties are ``None`` when
    every object was localized.
    """
    inputs = sorted(inputs, key=lambda i: i.key)
    found = [i for i in inputs if i.localized]
    raws = list(map_fn(raw_metrics, found))
    reports = {i.key: finalize_report(i.item_id, i.object_id, r, norm, deqa=i.deqa, phys_vlm=i.phys_vlm)
               for i, r in zip(found, raws)}
    missing = [i for i in inputs if not i.localized]
    penalties = None
    if missing:
        observed = {m: [r[m] for r in raws] for m in DISTANCE_METRICS}
        penalties = batch_penalties(observed, policy, fallback)
        for i in missing:
            reports[i.key] = evaluate_object(i, policy, norm, penalties=penalties)
    return [reports[i.key] for i in inputs], penalties


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Dataset means of raw and normalized values, summed in sorted key
    order with exact (fsum) accumulation."""
    if not reports:
        raise EmptySample("cannot aggregate an empty report list")
    reports = sorted(reports, key=lambda r: r.key)
    n = len(reports)

    def mean(values):
        return math.fsum(values) / n

    def optional_mean(values):
        values = [v for v in values if v is not None]
        return math.fsum(values) / len(values) if values else None

    return MetricReport(
        item_id="__summary__", object_id="__all__",
        raw={m: mean(r.raw[m] for r in reports) for m in METRICS},
        normalized={m: mean(r.normalized[m] for r in reports) for m in METRICS},
        penalty_applied={m: any(r.penalty_applied.get(m, False) for r in reports) for m in DISTANCE_METRICS},
        deqa=optional_mean(r.deqa for r in reports),
        phys_vlm=optional_mean(r.phys_vlm for r in reports),
        count=sum(r.count for r in reports),
    )
