"""JSON-lines manifests and reports.

Evaluation manifest, one object per line::

    {"item_id": "0001", "object_id": "cup", "localized": true,
     "pred_box": [x0, y0, x1, y1], "gt_box": [...],
     "pred_mask": "m/pred.pgm", "gt_mask": "m/gt.pgm",
     "pred_depth": "d/pred.pfm", "gt_depth": "d/gt.pfm",
     "camera": "cam.json",                       # optional
     "pred_cloud": "...", "gt_cloud": "...", "scene_cloud": "...",  # optional PLY
     "dino_similarity": 0.83,
     "relocation": {"v_pred": [..3], "v_gt": [..3]},
     "deqa": 3.9, "phys_vlm": 0.7, "prompt": "..."}  # optional pass-through

Relative paths resolve against the manifest's directory. Clouds that are not
given are reconstructed by unprojecting the masked depth (the whole valid
ground-truth depth for the scene cloud); a missing camera falls back to the
default pinhole for the depth size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError
from .formats import (iter_jsonl, read_camera, read_depth, read_image, read_mask,
                      read_ply)
from .geometry import CameraIntrinsics, CameraModel, PointCloud, unproject_masked
from .metrics import (DISTANCE_METRICS, METRICS, BoundingBox, MetricReport,
                      NormalizationSpec, ObjectEvalInput, PenaltyPolicy, RelocationPair)
from .pipeline import FrameRecord, PairSelection

EVAL_FILE_FIELDS = ("pred_mask", "gt_mask", "pred_depth", "gt_depth")
EVAL_OPTIONAL_FILES = ("camera", "pred_cloud", "gt_cloud", "scene_cloud")


@dataclass
class ManifestRecord:
    line: int
    data: dict
    base: Path = field(default_factory=Path)

    def path(self, key: str) -> Path:
        return self.base / self.data[key]

    def has(self, key: str) -> bool:
        return self.data.get(key) is not None


def _fail(msg: str, line: int, path) -> FormatError:
    return FormatError(msg, line=line, path=path)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_vector(v, n: int) -> bool:
    return isinstance(v, list) and len(v) == n and all(_is_number(x) for x in v)


def _check_files(rec: dict, keys, line: int, path, base: Path) -> None:
    for key in keys:
        if rec.get(key) is None:
            continue
        if not isinstance(rec[key], str):
            raise _fail(f"field {key!r} must be a path string", line, path)
        if not (base / rec[key]).is_file():
            raise _fail(f"field {key!r}: file not found: {base / rec[key]}", line, path)


def _ids(rec: dict, line: int, path) -> tuple[str, str]:
    for key in ("item_id", "object_id"):
        if key not in rec:
            raise _fail(f"missing required field {key!r}", line, path)
        if not isinstance(rec[key], (str, int)) or isinstance(rec[key], bool):
            raise _fail(f"field {key!r} must be a string or integer", line, path)
    return str(rec["item_id"]), str(rec["object_id"])


def validate_eval_record(rec: Any, line: int, path, base: Path) -> ManifestRecord:
    if not isinstance(rec, dict):
        raise _fail("record must be a JSON object", line, path)
    _ids(rec, line, path)
    if not isinstance(rec.get("localized"), bool):
        raise _fail("missing required field 'localized' (boolean)", line, path)
    if rec["localized"]:
        for key in ("pred_box", "gt_box"):
            if key not in rec:
                raise _fail(f"missing required field {key!r}", line, path)
            v = rec[key]
            if not _check_vector(v, 4) or v[0] > v[2] or v[1] > v[3]:
                raise _fail(f"field {key!r} must be [x_min, y_min, x_max, y_max]", line, path)
        for key in EVAL_FILE_FIELDS:
            if key not in rec:
                raise _fail(f"missing required field {key!r}", line, path)
        s = rec.get("dino_similarity")
        if s is None:
            raise _fail("missing required field 'dino_similarity'", line, path)
        if not _is_number(s) or not 0 <= s <= 1:
            raise _fail("field 'dino_similarity' must be a number in [0, 1]", line, path)
        rel = rec.get("relocation")
        if rel is None:
            raise _fail("missing required field 'relocation'", line, path)
        if not isinstance(rel, dict) or not all(_check_vector(rel.get(k), 3) for k in ("v_pred", "v_gt")):
            raise _fail("field 'relocation' needs 3-vectors 'v_pred' and 'v_gt'", line, path)
        for k in ("alpha", "beta", "epsilon"):
            if k in rel and (not _is_number(rel[k]) or rel[k] < 0):
                raise _fail(f"field 'relocation.{k}' must be a non-negative number", line, path)
        _check_files(rec, EVAL_FILE_FIELDS + EVAL_OPTIONAL_FILES, line, path, base)
    for key in ("deqa", "phys_vlm"):
        if rec.get(key) is not None and not _is_number(rec[key]):
            raise _fail(f"field {key!r} must be a number", line, path)
    return ManifestRecord(line, rec, base)


def read_manifest(path) -> list[ManifestRecord]:
    """Parse and validate an evaluation manifest.

    Every error carries the offending line number. An empty file yields an
    empty list.
    """
    path = Path(path)
    base = path.parent
    out, seen = [], {}
    for line, rec in iter_jsonl(path):
        r = validate_eval_record(rec, line, path, base)
        key = _ids(rec, line, path)
        if key in seen:
            raise _fail(f"duplicate (item_id, object_id) {key} (first on line {seen[key]})", line, path)
        seen[key] = line
        out.append(r)
    return out


def _camera_for(rec: ManifestRecord, shape) -> CameraModel:
    if rec.has("camera"):
        cam = read_camera(rec.path("camera"))
        i = cam.intrinsics
        if (i.height, i.width) != tuple(shape):
            raise FormatError(f"camera is {i.width}x{i.height} but depth is {shape[1]}x{shape[0]}",
                              line=rec.line)
        return cam
    return CameraModel(CameraIntrinsics.default(shape[1], shape[0]))


def load_eval_input(rec: ManifestRecord) -> ObjectEvalInput:
    """Load the files referenced by one manifest record."""
    d = rec.data
    common = dict(item_id=str(d["item_id"]), object_id=str(d["object_id"]),
                  deqa=d.get("deqa"), phys_vlm=d.get("phys_vlm"))
    if not d["localized"]:
        return ObjectEvalInput(localized=False, **common)
    pred_mask, gt_mask = read_mask(rec.path("pred_mask")), read_mask(rec.path("gt_mask"))
    pred_depth, gt_depth = read_depth(rec.path("pred_depth")), read_depth(rec.path("gt_depth"))
    shapes = {pred_mask.shape, gt_mask.shape, pred_depth.shape, gt_depth.shape}
    if len(shapes) != 1:
        raise FormatError(f"mask/depth sizes disagree: {sorted(shapes)}", line=rec.line)
    cam = None

    def cloud(key, mask, depth) -> PointCloud:
        nonlocal cam
        if rec.has(key):
            return read_ply(rec.path(key))
        if cam is None:
            cam = _camera_for(rec, gt_depth.shape)
        return unproject_masked(None, mask, depth, cam.intrinsics, cam.pose, key=f"{common['item_id']}/{key}")

    rel = d["relocation"]
    return ObjectEvalInput(
        localized=True,
        pred_box=BoundingBox(*d["pred_box"]), gt_box=BoundingBox(*d["gt_box"]),
        pred_mask=pred_mask, gt_mask=gt_mask, pred_depth=pred_depth, gt_depth=gt_depth,
        pred_cloud=cloud("pred_cloud", pred_mask, pred_depth),
        gt_cloud=cloud("gt_cloud", gt_mask, gt_depth),
        scene_cloud_gt=cloud("scene_cloud", np.ones(gt_depth.shape, bool), gt_depth),
        dino_similarity=float(d["dino_similarity"]),
        relocation=RelocationPair(rel["v_pred"], rel["v_gt"],
                                  **{k: float(rel[k]) for k in ("alpha", "beta", "epsilon") if k in rel}),
        **common,
    )


# ---------------------------------------------------------------- reports

def report_to_record(rep: MetricReport, kind: str = "object") -> dict:
    rec = {"type": kind, "item_id": rep.item_id, "object_id": rep.object_id,
           "raw": dict(rep.raw), "normalized": dict(rep.normalized),
           "penalty_applied": dict(rep.penalty_applied),
           "deqa": rep.deqa, "phys_vlm": rep.phys_vlm}
    if kind == "summary":
        rec["count"] = rep.count
    return rec


def record_to_report(rec: dict) -> MetricReport:
    return MetricReport(rec["item_id"], rec["object_id"],
                        {m: float(rec["raw"][m]) for m in METRICS},
                        {m: float(rec["normalized"][m]) for m in METRICS},
                        {m: bool(rec["penalty_applied"].get(m, False)) for m in DISTANCE_METRICS},
                        rec.get("deqa"), rec.get("phys_vlm"), int(rec.get("count", 1)))


def report_records(reports: list[MetricReport], summary: MetricReport,
                   norm: NormalizationSpec, policy: PenaltyPolicy,
                   penalties: dict | None) -> list[dict]:
    """Per-object lines followed by one summary line carrying the
    normalisation and penalty configuration that produced them."""
    out = [report_to_record(r) for r in reports]
    s = report_to_record(summary, "summary")
    s.update(normalization=norm.to_dict(),
             penalty_policy={"q_hi": policy.q_hi, "q_mid": policy.q_mid, "multiplier": policy.multiplier},
             penalties=penalties)
    out.append(s)
    return out


def read_report(path) -> tuple[list[MetricReport], dict | None]:
    """Return the per-object reports and the raw summary record."""
    objects, summary = [], None
    for line, rec in iter_jsonl(path):
        try:
            if rec.get("type") == "summary":
                summary = rec
            else:
                objects.append(record_to_report(rec))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"bad report record: {exc!r}", line=line, path=path) from None
    return objects, summary


# ---------------------------------------------------------------- curation

def read_frames_manifest(path) -> dict[str, list[ManifestRecord]]:
    """Group frame records by ``clip_id``, preserving first-seen clip order.

    Each line: ``{"clip_id", "frame_index", "depth", "mask", "camera"?, "image"?}``.
    """
    path = Path(path)
    base = path.parent
    clips: dict[str, list[ManifestRecord]] = {}
    seen = set()
    for line, rec in iter_jsonl(path):
        if not isinstance(rec, dict):
            raise _fail("record must be a JSON object", line, path)
        for key in ("clip_id", "frame_index", "depth", "mask"):
            if key not in rec:
                raise _fail(f"missing required field {key!r}", line, path)
        if not isinstance(rec["frame_index"], int) or isinstance(rec["frame_index"], bool):
            raise _fail("field 'frame_index' must be an integer", line, path)
        key = (str(rec["clip_id"]), rec["frame_index"])
        if key in seen:
            raise _fail(f"duplicate frame {key}", line, path)
        seen.add(key)
        _check_files(rec, ("depth", "mask", "camera", "image"), line, path, base)
        clips.setdefault(str(rec["clip_id"]), []).append(ManifestRecord(line, rec, base))
    return clips


def load_frame(rec: ManifestRecord) -> FrameRecord:
    depth = read_depth(rec.path("depth"))
    mask = read_mask(rec.path("mask"))
    if mask.shape != depth.shape:
        raise FormatError(f"mask {mask.shape} vs depth {depth.shape}", line=rec.line)
    image = read_image(rec.path("image")) if rec.has("image") else None
    if image is not None and image.shape[:2] != depth.shape:
        raise FormatError(f"image {image.shape[:2]} vs depth {depth.shape}", line=rec.line)
    return FrameRecord(rec.data["frame_index"], depth, mask, _camera_for(rec, depth.shape), image)


def pair_to_record(clip_id: str, sel: PairSelection) -> dict:
    return {
        "clip_id": clip_id, "i": sel.i, "j": sel.j,
        "centroid_i": [float(x) for x in sel.centroid_i],
        "centroid_j": [float(x) for x in sel.centroid_j],
        "delta": [float(x) for x in sel.delta],
        "displacement": sel.displacement,
        "scene_diagonal": sel.scene_diagonal,
        "normalized_displacement": sel.normalized_displacement,
        "short_clip_rule_used": sel.short_clip_rule_used,
        "units": {"displacement": "depth", "filter": "scene_diagonal"},
        "vlm_status": "pending",
    }


def record_to_pair(rec: dict) -> PairSelection:
    return PairSelection(int(rec["i"]), int(rec["j"]), float(rec["displacement"]),
                         np.asarray(rec["delta"], dtype=np.float64), bool(rec["short_clip_rule_used"]),
                         np.asarray(rec["centroid_i"], dtype=np.float64),
                         np.asarray(rec["centroid_j"], dtype=np.float64),
                         float(rec.get("scene_diagonal", 1.0)))


def read_pairs_manifest(path) -> list[tuple[dict, PairSelection]]:
    out = []
    for line, rec in iter_jsonl(path):
        try:
            sel = record_to_pair(rec)
            if not _check_vector(list(sel.delta), 3) or not sel.scene_diagonal > 0:
                raise ValueError("delta must have 3 finite values and scene_diagonal be positive")
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"bad pair record: {exc!r}", line=line, path=path) from None
        out.append((rec, sel))
    return out
