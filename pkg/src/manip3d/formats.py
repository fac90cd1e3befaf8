"""Readers and writers for every on-disk artifact.

Binary codecs come in pairs: ``encode_*`` / ``decode_*`` work on bytes and
``read_*`` / ``write_*`` wrap them for paths. Decoders are strict: anything
they cannot parse unambiguously raises `FormatError`.

========  ===========================================================
depth     PFM, grayscale ``Pf``, little-endian scale, rows bottom-up
mask      PGM ``P5``, maxval 255, nonzero = object
image     PNG, 8-bit RGB (alpha dropped on read)
camera    JSON: fx fy cx cy width height R (row-major) t
tokens    ``CTOK`` u32 version/count/dim + float32 payload, all LE
cloud     ASCII PLY, ``x y z [red green blue]``
records   JSON lines (manifests, reports)
========  ===========================================================
"""

from __future__ import annotations

import io
import json
import math
import os
import re
import struct
import tempfile
import zlib
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, IoError
from .geometry import CameraIntrinsics, CameraModel, CameraPose, PointCloud

TMPDIR_ENV = "MANIP3D_TMPDIR"
_MAX_HEADER_LINE = 256


@contextmanager
def atomic_writer(path, mode: str = "wb"):
    """Write to a temporary file, then rename over ``path``.

    The temporary file lives next to ``path`` unless ``$MANIP3D_TMPDIR``
    points elsewhere.
    """
    path = Path(path)
    tmpdir = os.environ.get(TMPDIR_ENV) or str(path.parent or ".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=tmpdir)
    except OSError as exc:
        raise IoError(f"cannot create temporary file for {path}: {exc}") from exc
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        try:
            os.replace(tmp, path)
        except OSError:
            import shutil
            shutil.move(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_bytes(data: bytes, path) -> None:
    with atomic_writer(path) as fh:
        fh.write(data)


def _with_path(fn, data, path):
    try:
        return fn(data)
    except FormatError as exc:
        raise FormatError(exc.detail, offset=exc.offset, line=exc.line, path=path) from None


# ---------------------------------------------------------------- PFM depth

_INT = re.compile(rb"[0-9]+")
_FLOAT = re.compile(rb"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")


def _header_lines(data: bytes, count: int) -> tuple[list[bytes], int]:
    lines, pos = [], 0
    for _ in range(count):
        end = data.find(b"\n", pos, pos + _MAX_HEADER_LINE)
        if end < 0:
            raise FormatError("unterminated header line", offset=pos)
        lines.append(data[pos:end])
        pos = end + 1
    return lines, pos


def encode_pfm(depth) -> bytes:
    d = np.asarray(depth)
    if d.ndim != 2 or d.size == 0:
        raise ValueError(f"depth must be a non-empty 2D array, got shape {d.shape}")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(d[::-1].astype("<f4")).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    """Decode a grayscale PFM into a top-to-bottom float32 ``(H, W)`` array.

    Values are returned untouched, including NaN, inf and non-positive
    depths (which `geometry.valid_depth` treats as invalid).
    """
    (magic, dims, scale), pos = _header_lines(data, 3)
    if magic == b"PF":
        raise FormatError("color PFM (PF) is not supported, expected Pf", offset=0)
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic[:8]!r}", offset=0)
    parts = dims.split(b" ")
    if len(parts) != 2 or not all(_INT.fullmatch(p) for p in parts):
        raise FormatError(f"bad PFM dimensions line {dims[:32]!r}", offset=3)
    w, h = int(parts[0]), int(parts[1])
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive PFM size {w}x{h}", offset=3)
    if not _FLOAT.fullmatch(scale):
        raise FormatError(f"bad PFM scale line {scale[:32]!r}", offset=4 + len(dims))
    s = float(scale)
    if not (s < 0 and math.isfinite(s)):
        raise FormatError(f"PFM scale must be negative (little-endian) and finite, got {s}",
                          offset=4 + len(dims))
    need = w * h * 4
    have = len(data) - pos
    if have < need:
        raise FormatError(f"truncated PFM payload: {have} of {need} bytes", offset=len(data))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after PFM payload", offset=pos + need)
    arr = np.frombuffer(data, dtype="<f4", count=w * h, offset=pos)
    return arr.reshape(h, w)[::-1].astype(np.float32)


def read_depth(path) -> np.ndarray:
    return _with_path(decode_pfm, _read_bytes(path), path)


def write_depth(depth, path) -> None:
    _write_bytes(encode_pfm(depth), path)


# ---------------------------------------------------------------- PGM mask

_WS = b" \t\r\n"


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens after the magic,
    skipping ``#`` comments; returns the tokens and the payload offset."""
    pos, toks = 2, []
    while len(toks) < count:
        if pos >= len(data):
            raise FormatError("truncated PGM header", offset=pos)
        c = data[pos:pos + 1]
        if c in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("unterminated PGM comment", offset=pos)
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and data[pos] not in _WS:
                pos += 1
            tok = data[start:pos]
            if not _INT.fullmatch(tok) or len(tok) > 9:
                raise FormatError(f"bad PGM header field {tok[:16]!r}", offset=start)
            toks.append(tok)
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after PGM maxval", offset=pos)
    return toks, pos + 1


def encode_pgm(mask) -> bytes:
    m = np.asarray(mask)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"mask must be a non-empty 2D array, got shape {m.shape}")
    h, w = m.shape
    payload = np.where(m.astype(bool), 255, 0).astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n255\n".encode("ascii") + payload


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode an 8-bit binary PGM into a boolean ``(H, W)`` mask."""
    if data[:2] != b"P5" or len(data) < 3 or data[2] not in _WS:
        raise FormatError(f"bad PGM magic {data[:3]!r}, expected P5", offset=0)
    (w, h, maxval), pos = _pnm_tokens(data, 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive PGM size {w}x{h}", offset=2)
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}", offset=2)
    have = len(data) - pos
    if have < w * h:
        raise FormatError(f"truncated PGM payload: {have} of {w * h} bytes", offset=len(data))
    if have > w * h:
        raise FormatError(f"{have - w * h} trailing bytes after PGM payload", offset=pos + w * h)
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) != 0


def read_mask(path) -> np.ndarray:
    return _with_path(decode_pgm, _read_bytes(path), path)


def write_mask(mask, path) -> None:
    _write_bytes(encode_pgm(mask), path)


# ---------------------------------------------------------------- PNG image

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _check_png_chunks(data: bytes) -> None:
    # Pillow tolerates some damaged ancillary chunks; every CRC is checked here
    if data[:8] != _PNG_SIG:
        raise FormatError("not a PNG file", offset=0)
    pos, seen_end = 8, False
    while pos < len(data):
        if pos + 12 > len(data):
            raise FormatError("truncated PNG chunk", offset=pos)
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        end = pos + 12 + length
        if end > len(data):
            raise FormatError("PNG chunk runs past end of file", offset=pos)
        ctype = data[pos + 4:pos + 8]
        (crc,) = struct.unpack(">I", data[end - 4:end])
        if zlib.crc32(data[pos + 4:end - 4]) != crc:
            raise FormatError(f"PNG chunk {ctype!r} has a bad CRC", offset=pos)
        pos = end
        if ctype == b"IEND":
            seen_end = True
            break
    if not seen_end:
        raise FormatError("PNG has no IEND chunk", offset=pos)
    if pos != len(data):
        raise FormatError("trailing bytes after PNG IEND", offset=pos)


def encode_png(image) -> bytes:
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValueError(f"image must be HxWx3 uint8, got {a.shape} {a.dtype}")
    buf = io.BytesIO()
    PILImage.fromarray(a, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode a PNG into an ``(H, W, 3)`` uint8 array."""
    _check_png_chunks(data)
    try:
        with PILImage.open(io.BytesIO(data), formats=["PNG"]) as im:
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P", "1"):
                raise FormatError(f"unsupported PNG mode {im.mode}")
            im.load()
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except FormatError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types on bad data
        raise FormatError(f"PNG decode failed: {exc}") from None


def read_image(path) -> np.ndarray:
    return _with_path(decode_png, _read_bytes(path), path)


def write_image(image, path) -> None:
    _write_bytes(encode_png(image), path)


# ---------------------------------------------------------------- camera JSON

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy")


def _number(obj, key):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise FormatError(f"camera field {key!r} must be a finite number")
    return v


def camera_from_dict(obj: dict) -> CameraModel:
    """Build a validated camera. Without fx/fy/cx/cy a default pinhole is
    synthesized from width/height; without R/t the pose is identity."""
    if not isinstance(obj, dict):
        raise FormatError("camera must be a JSON object")
    for k in ("width", "height"):
        if k not in obj:
            raise FormatError(f"camera is missing required field {k!r}")
        if isinstance(obj[k], bool) or not isinstance(obj[k], int) or obj[k] <= 0:
            raise FormatError(f"camera field {k!r} must be a positive integer")
    w, h = obj["width"], obj["height"]
    present = [k for k in _INTRINSIC_KEYS if k in obj]
    if not present:
        intr = CameraIntrinsics.default(w, h)
    elif len(present) < 4:
        missing = [k for k in _INTRINSIC_KEYS if k not in obj]
        raise FormatError(f"camera is missing required field {missing[0]!r}")
    else:
        try:
            intr = CameraIntrinsics(*(float(_number(obj, k)) for k in _INTRINSIC_KEYS), w, h)
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"invalid intrinsics: {exc}") from None
    R = obj.get("R", [1, 0, 0, 0, 1, 0, 0, 0, 1])
    t = obj.get("t", [0, 0, 0])
    try:
        R = np.asarray(R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(t, dtype=np.float64).reshape(3)
    except (TypeError, ValueError):
        raise FormatError("camera R must have 9 numbers and t 3 numbers") from None
    if not np.all(np.isfinite(t)):
        raise FormatError("camera t must be finite")
    return CameraModel(intr, CameraPose(R, t))


def camera_to_dict(cam: CameraModel) -> dict:
    i = cam.intrinsics
    return {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "width": i.width, "height": i.height,
            "R": [float(x) for x in cam.pose.R.ravel()], "t": [float(x) for x in cam.pose.t]}


def read_camera(path) -> CameraModel:
    text = _read_bytes(path)
    try:
        obj = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"camera is not valid JSON: {exc}", path=path) from None
    try:
        return camera_from_dict(obj)
    except FormatError as exc:
        raise FormatError(exc.detail, path=path) from None


def write_camera(cam: CameraModel, path) -> None:
    _write_bytes(json.dumps(camera_to_dict(cam), indent=2).encode() + b"\n", path)


# ---------------------------------------------------------------- CTOK tokens

_CTOK_MAGIC = b"CTOK"
_CTOK_VERSION = 1
_CTOK_HEADER = struct.Struct("<4sIII")


def encode_tokens(tokens) -> bytes:
    x = np.asarray(tokens)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"tokens must be a non-empty 2D array, got shape {x.shape}")
    x = x.astype("<f4")
    if not np.all(np.isfinite(x)):
        raise ValueError("tokens must be finite")
    return _CTOK_HEADER.pack(_CTOK_MAGIC, _CTOK_VERSION, *x.shape) + x.tobytes()


def decode_tokens(data: bytes) -> np.ndarray:
    """Decode a CTOK file into a float32 ``(count, dim)`` array."""
    if len(data) < _CTOK_HEADER.size:
        raise FormatError("truncated CTOK header", offset=len(data))
    magic, version, count, dim = _CTOK_HEADER.unpack_from(data)
    if magic != _CTOK_MAGIC:
        raise FormatError(f"bad token-file magic {magic!r}", offset=0)
    if version != _CTOK_VERSION:
        raise FormatError(f"unsupported token-file version {version}", offset=4)
    if count == 0:
        raise FormatError("token file declares zero frames", offset=8)
    if dim == 0:
        raise FormatError("token file declares zero dimensions", offset=12)
    need = count * dim * 4
    have = len(data) - _CTOK_HEADER.size
    if have != need:
        raise FormatError(f"token payload is {have} bytes, header declares {count}x{dim} = {need}",
                          offset=_CTOK_HEADER.size + min(have, need))
    x = np.frombuffer(data, dtype="<f4", offset=_CTOK_HEADER.size).reshape(count, dim)
    bad = np.nonzero(~np.isfinite(x).ravel())[0]
    if len(bad):
        raise FormatError("non-finite token value", offset=_CTOK_HEADER.size + 4 * int(bad[0]))
    return x.astype(np.float32)


def read_tokens(path) -> np.ndarray:
    return _with_path(decode_tokens, _read_bytes(path), path)


def write_tokens(tokens, path) -> None:
    _write_bytes(encode_tokens(tokens), path)


# ---------------------------------------------------------------- PLY clouds

def encode_ply(cloud: PointCloud) -> bytes:
    """ASCII PLY. Coordinates are stored as float32 printed with 9
    significant digits, which round-trips float32 exactly."""
    pts = cloud.points.astype(np.float32)
    colored = cloud.colors is not None
    head = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
            "property float x", "property float y", "property float z"]
    if colored:
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head.append("end_header")
    out = io.StringIO()
    out.write("\n".join(head) + "\n")
    for k, p in enumerate(pts):
        line = "%.9g %.9g %.9g" % (p[0], p[1], p[2])
        if colored:
            c = cloud.colors[k]
            line += " %d %d %d" % (c[0], c[1], c[2])
        out.write(line + "\n")
    return out.getvalue().encode("ascii")


def decode_ply(data: bytes) -> PointCloud:
    """Parse the ASCII PLY layout written by `encode_ply`."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("PLY is not ASCII", offset=exc.start) from None
    lines = text.split("\n")
    if lines[0] != "ply" or len(lines) < 3 or lines[1] != "format ascii 1.0":
        raise FormatError("not an ASCII 1.0 PLY file", line=1)
    count, props, k = None, [], 2
    while k < len(lines) and lines[k] != "end_header":
        f = lines[k].split()
        if f[:2] == ["element", "vertex"] and len(f) == 3 and f[2].isdigit() and count is None:
            count = int(f[2])
        elif f and f[0] == "property" and len(f) == 3 and count is not None:
            props.append((f[1], f[2]))
        elif not f or f[0] != "comment":
            raise FormatError(f"unsupported PLY header line {lines[k][:40]!r}", line=k + 1)
        k += 1
    if k == len(lines) or count is None:
        raise FormatError("PLY header has no end_header or vertex element", line=k)
    names = [n for _, n in props]
    if names not in (["x", "y", "z"], ["x", "y", "z", "red", "green", "blue"]):
        raise FormatError(f"unsupported PLY vertex properties {names}", line=k)
    if any(t != "float" for t, _ in props[:3]) or any(t != "uchar" for t, _ in props[3:]):
        raise FormatError("PLY properties must be float xyz and uchar colors", line=k)
    body = lines[k + 1:]
    if body and body[-1] == "":
        body = body[:-1]
    if len(body) != count:
        raise FormatError(f"PLY declares {count} vertices, found {len(body)}", line=k + 2 + min(count, len(body)))
    pts = np.empty((count, 3), dtype=np.float32)
    cols = np.empty((count, 3), dtype=np.uint8) if len(props) == 6 else None
    for r, line in enumerate(body):
        f = line.split(" ")
        try:
            if len(f) != len(props):
                raise ValueError
            if not all(_FLOAT.fullmatch(v.encode()) for v in f[:3]):
                raise ValueError
            with np.errstate(over="ignore"):
                xyz = np.array(f[:3], dtype=np.float32)
            if not np.all(np.isfinite(xyz)):
                raise ValueError
            pts[r] = xyz
            if cols is not None:
                if not all(v.isdigit() and int(v) <= 255 for v in f[3:]):
                    raise ValueError
                cols[r] = [int(v) for v in f[3:]]
        except ValueError:
            raise FormatError(f"bad PLY vertex {line[:60]!r}", line=k + 2 + r) from None
    return PointCloud(pts.astype(np.float64), cols)


def read_ply(path) -> PointCloud:
    return _with_path(decode_ply, _read_bytes(path), path)


def write_ply(cloud: PointCloud, path) -> None:
    _write_bytes(encode_ply(cloud), path)


# ---------------------------------------------------------------- JSON lines

def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def iter_jsonl(path) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, object)`` for every non-blank line.

    Lines must be UTF-8 JSON; ``NaN``/``Infinity`` are rejected, mirroring
    the writer.
    """
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        for n, raw in enumerate(fh, 1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"line is not valid UTF-8: {exc.reason}", line=n, path=path) from None
            if not line.strip():
                continue
            try:
                yield n, json.loads(line, parse_constant=_reject_constant)
            except ValueError as exc:
                raise FormatError(f"malformed JSON: {exc}", line=n, path=path) from None


def dump_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, allow_nan=False) + "\n" for r in records)


def write_jsonl(records: Iterable[dict], path) -> None:
    _write_bytes(dump_jsonl(records).encode("utf-8"), path)
