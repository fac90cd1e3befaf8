"""Exception hierarchy shared by every module."""

from __future__ import annotations

__all__ = [
    "Manip3DError", "InvalidDepth", "OutOfBounds", "ShapeMismatch", "EmptyObject",
    "BehindCamera", "InvalidRotation", "MaskOverlap", "DegenerateBox", "EmptyRegion",
    "DegenerateScene", "EmptySample", "InsufficientFrames", "FormatError", "IoError",
]


class Manip3DError(Exception):
    """Base class for all library errors."""


class InvalidDepth(Manip3DError, ValueError):
    pass


class OutOfBounds(Manip3DError, ValueError):
    pass


class ShapeMismatch(Manip3DError, ValueError):
    pass


class EmptyObject(Manip3DError, ValueError):
    """No usable points for an object.

    ``key`` carries the object id or frame index when known.
    """

    def __init__(self, message: str = "object has no valid points", key=None):
        super().__init__(message if key is None else f"{message} ({key!r})")
        self.key = key


class BehindCamera(Manip3DError, ValueError):
    def __init__(self, message: str = "point is behind the camera", key=None):
        super().__init__(message if key is None else f"{message} ({key!r})")
        self.key = key


class InvalidRotation(Manip3DError, ValueError):
    pass


class MaskOverlap(Manip3DError, ValueError):
    pass


class DegenerateBox(Manip3DError, ValueError):
    pass


class EmptyRegion(Manip3DError, ValueError):
    pass


class DegenerateScene(Manip3DError, ValueError):
    pass


class EmptySample(Manip3DError, ValueError):
    pass


class InsufficientFrames(Manip3DError, ValueError):
    pass


class FormatError(Manip3DError, ValueError):
    """Malformed file or record.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based line
    number for JSON-lines files.
    """

    def __init__(self, message: str, *, offset: int | None = None,
                 line: int | None = None, path=None):
        parts = [message]
        if offset is not None:
            parts.append(f"at byte {offset}")
        if line is not None:
            parts.append(f"on line {line}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))
        self.detail = message
        self.offset = offset
        self.line = line
        self.path = path


class IoError(Manip3DError, OSError):
    pass
