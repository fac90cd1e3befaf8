"""Command-line entry points.

    manip3d preview  --image I --depth D [--camera C] --requests R --out P
    manip3d evaluate --manifest M --out REPORT
    manip3d cluster  --tokens T --out CLIPS
    manip3d select   --frames F --out PAIRS
    manip3d filter   --pairs PAIRS --out KEPT

Settings resolve as defaults < ``--config`` JSON < flags. Exit codes:
0 success, 1 input or validation error, 2 configuration error. Diagnostics
go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats, manifest
from .errors import EmptySample, FormatError, Manip3DError
from .geometry import CameraIntrinsics, CameraModel, PointCloud
from .metrics import NormalizationSpec, PenaltyPolicy, aggregate, evaluate_batch
from .pipeline import (DBSCANParams, dbscan, depth_filter, normalize_tokens,
                       select_pair, static_clips)
from .preview import ManipulationRequest, PreviewConfig, render_preview

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "threads": 1,
    "preview": {"splat_radius": 1, "z_test_epsilon": None, "erase_policy": "fill_flat_color",
                "background_color": [128, 128, 128]},
    "dbscan": {"eps": 0.5, "min_samples": 5},
    "clips": {"min_run": 2, "normalize": False},
    "select": {"short_clip_threshold": 16},
    "filter": {"min_total": 0.05, "min_depth_axis": 0.02},
    "penalty": {"q_hi": 0.99, "q_mid": 0.95, "multiplier": 1.2, "fallback": None},
    "normalization": {},
}

# flag dest -> (config section, key); section None means top level
FLAG_MAP = {
    "threads": (None, "threads"),
    "splat_radius": ("preview", "splat_radius"),
    "z_epsilon": ("preview", "z_test_epsilon"),
    "erase_policy": ("preview", "erase_policy"),
    "fill_color": ("preview", "background_color"),
    "eps": ("dbscan", "eps"),
    "min_samples": ("dbscan", "min_samples"),
    "min_run": ("clips", "min_run"),
    "normalize": ("clips", "normalize"),
    "short_clip_threshold": ("select", "short_clip_threshold"),
    "min_total": ("filter", "min_total"),
    "min_depth_axis": ("filter", "min_depth_axis"),
    "q_hi": ("penalty", "q_hi"),
    "q_mid": ("penalty", "q_mid"),
    "multiplier": ("penalty", "multiplier"),
    "penalty_fallback": ("penalty", "fallback"),
}


class ConfigError(Exception):
    pass


def diagnose(kind: str, message: str, **extra) -> None:
    rec = {"level": "error", "kind": kind, "message": message}
    rec.update({k: str(v) for k, v in extra.items() if v is not None})
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in user.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(cfg[key], dict) and key != "normalization":
                if not isinstance(val, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                unknown = set(val) - set(cfg[key])
                if unknown:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
                cfg[key].update(val)
            else:
                cfg[key] = val
    for dest, (section, key) in FLAG_MAP.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        if section is None:
            cfg[key] = val
        else:
            cfg[section][key] = val
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError(f"threads must be a positive integer, got {cfg['threads']!r}")
    return cfg


def _build(factory, section: str, params: dict):
    try:
        return factory(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} settings: {exc}") from None


def _mapper(threads: int):
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


# ---------------------------------------------------------------- preview

def _read_requests(path, shape) -> list[ManipulationRequest]:
    path = Path(path)
    out = []
    for line, rec in formats.iter_jsonl(path):
        if not isinstance(rec, dict) or "mask" not in rec or "delta" not in rec:
            raise FormatError("request needs 'mask' and 'delta'", line=line, path=path)
        mask_path = path.parent / rec["mask"]
        if not mask_path.is_file():
            raise FormatError(f"mask file not found: {mask_path}", line=line, path=path)
        mask = formats.read_mask(mask_path)
        try:
            out.append(ManipulationRequest(str(rec.get("object_id", f"object{line}")), mask, rec["delta"]))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad request: {exc}", line=line, path=path) from None
    if not out:
        raise FormatError("requests file is empty", path=path)
    return out


def run_preview(args, cfg) -> int:
    pcfg = _build(PreviewConfig, "preview", cfg["preview"])
    image = formats.read_image(args.image)
    depth = formats.read_depth(args.depth)
    if args.camera:
        cam = formats.read_camera(args.camera)
    else:
        cam = CameraModel(CameraIntrinsics.default(depth.shape[1], depth.shape[0]))
    requests = _read_requests(args.requests, depth.shape)
    preview, clouds = render_preview(image, depth, cam.intrinsics, cam.pose, requests, pcfg,
                                     return_clouds=True)
    if args.dry_run:
        return EXIT_OK
    formats.write_image(preview, args.out)
    if args.ply_out:
        ordered = [clouds[k] for k in sorted(clouds)]
        formats.write_ply(PointCloud(np.concatenate([c.points for c in ordered]),
                                     np.concatenate([c.colors for c in ordered])), args.ply_out)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def run_evaluate(args, cfg) -> int:
    pen = dict(cfg["penalty"])
    fallback = pen.pop("fallback")
    policy = _build(PenaltyPolicy, "penalty", pen)
    norm = _build(NormalizationSpec, "normalization", {"ranges": cfg["normalization"]})
    records = manifest.read_manifest(args.manifest)
    if not records:
        raise FormatError("manifest has no records", path=args.manifest)
    map_fn, pool = _mapper(cfg["threads"])
    try:
        inputs = list(map_fn(manifest.load_eval_input, records))
        try:
            reports, penalties = evaluate_batch(inputs, policy, norm, fallback=fallback, map_fn=map_fn)
        except EmptySample as exc:
            raise ConfigError(str(exc)) from None
    finally:
        if pool is not None:
            pool.shutdown()
    if args.dry_run:
        return EXIT_OK
    summary = aggregate(reports)
    formats.write_jsonl(manifest.report_records(reports, summary, norm, policy, penalties), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- curation

def run_cluster(args, cfg) -> int:
    params = _build(DBSCANParams, "dbscan", cfg["dbscan"])
    min_run = int(cfg["clips"]["min_run"])
    if min_run < 1:
        raise ConfigError(f"min_run must be >= 1, got {min_run}")
    tokens = formats.read_tokens(args.tokens).astype(np.float64)
    if cfg["clips"]["normalize"]:
        tokens = normalize_tokens(tokens)
    labels = dbscan(tokens, params)
    clips = static_clips(labels, min_run)
    if args.dry_run:
        return EXIT_OK
    stem = Path(args.tokens).stem
    recs = [{"type": "clip", "clip_id": f"{stem}-{k:04d}", "label": c.label,
             "start": c.start, "end": c.end, "length": len(c)} for k, c in enumerate(clips)]
    recs.append({"type": "assignment", "tokens": str(args.tokens), "labels": [int(v) for v in labels],
                 "eps": params.eps, "min_samples": params.min_samples, "min_run": min_run,
                 "normalized": bool(cfg["clips"]["normalize"])})
    formats.write_jsonl(recs, args.out)
    return EXIT_OK


def run_select(args, cfg) -> int:
    threshold = int(cfg["select"]["short_clip_threshold"])
    if threshold < 1:
        raise ConfigError(f"short_clip_threshold must be >= 1, got {threshold}")
    clips = manifest.read_frames_manifest(args.frames)
    map_fn, pool = _mapper(cfg["threads"])

    def one(item):
        clip_id, recs = item
        frames = [manifest.load_frame(r) for r in recs]
        return manifest.pair_to_record(clip_id, select_pair(frames, threshold))

    try:
        out = list(map_fn(one, sorted(clips.items())))
    finally:
        if pool is not None:
            pool.shutdown()
    if not args.dry_run:
        formats.write_jsonl(out, args.out)
    return EXIT_OK


def run_filter(args, cfg) -> int:
    f = cfg["filter"]
    min_total, min_axis = float(f["min_total"]), float(f["min_depth_axis"])
    if min_total < 0 or min_axis < 0:
        raise ConfigError("filter thresholds must be non-negative")
    out = []
    for rec, sel in manifest.read_pairs_manifest(args.pairs):
        keep = depth_filter(sel, min_total, min_axis)
        if keep or not args.only_kept:
            out.append(dict(rec, keep=keep, filter={"min_total": min_total, "min_depth_axis": min_axis}))
    if not args.dry_run:
        formats.write_jsonl(out, args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _rgb(text: str) -> list[int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected R,G,B")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (overridden by flags)")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--dry-run", action="store_true", help="validate inputs, write nothing")

    p = argparse.ArgumentParser(prog="manip3d", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preview", parents=[common], help="render a 3D-aware translation preview")
    s.add_argument("--image", required=True, help="source PNG")
    s.add_argument("--depth", required=True, help="scene depth PFM")
    s.add_argument("--camera", help="camera JSON (default pinhole if omitted)")
    s.add_argument("--requests", required=True, help="JSON lines of {object_id, mask, delta}")
    s.add_argument("--out", required=True, help="output PNG")
    s.add_argument("--ply-out", help="also write the translated clouds as PLY")
    s.add_argument("--splat-radius", type=int)
    s.add_argument("--z-epsilon", type=float)
    s.add_argument("--erase-policy", choices=["leave", "fill_background_estimate", "fill_flat_color"])
    s.add_argument("--fill-color", type=_rgb, help="R,G,B")
    s.set_defaults(func=run_preview)

    s = sub.add_parser("evaluate", parents=[common], help="score edits from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="report (JSON lines)")
    s.add_argument("--q-hi", type=float)
    s.add_argument("--q-mid", type=float)
    s.add_argument("--multiplier", type=float)
    s.add_argument("--penalty-fallback", type=float,
                   help="penalty used when no object of the batch was localized")
    s.set_defaults(func=run_evaluate)

    s = sub.add_parser("cluster", parents=[common], help="camera-static clips from camera tokens")
    s.add_argument("--tokens", required=True, help="CTOK token file")
    s.add_argument("--out", required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--min-samples", type=int)
    s.add_argument("--min-run", type=int)
    s.add_argument("--normalize", action="store_const", const=True, default=None,
                   help="scale tokens to unit length before clustering")
    s.set_defaults(func=run_cluster)

    s = sub.add_parser("select", parents=[common], help="depth-aware frame pair selection")
    s.add_argument("--frames", required=True, help="frames manifest (JSON lines)")
    s.add_argument("--out", required=True)
    s.add_argument("--short-clip-threshold", type=int)
    s.set_defaults(func=run_select)

    s = sub.add_parser("filter", parents=[common], help="displacement threshold filter")
    s.add_argument("--pairs", required=True, help="pairs manifest from 'select'")
    s.add_argument("--out", required=True)
    s.add_argument("--min-total", type=float)
    s.add_argument("--min-depth-axis", type=float)
    s.add_argument("--only-kept", action="store_true", help="drop rejected pairs from the output")
    s.set_defaults(func=run_filter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        diagnose("config", str(exc))
        return EXIT_CONFIG
    except FormatError as exc:
        diagnose("FormatError", exc.detail, path=exc.path, line=exc.line, offset=exc.offset)
        return EXIT_INPUT
    except (Manip3DError, OSError, ValueError) as exc:
        diagnose(type(exc).__name__, str(exc), path=getattr(exc, "filename", None))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
