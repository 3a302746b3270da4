"""Depth raster files.

Layout: 16-byte header (magic ``DPTH``, u32 width, u32 height, u32 reserved)
followed by ``width*height`` little-endian float32 values, row-major.
Invalid pixels are quiet NaN.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, MissingFile
from ..geometry import DepthMap

MAGIC = b"DPTH"
_HEADER = struct.Struct("<4sIII")


def write_depth(path: Path, depth: DepthMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vals = np.where(np.isfinite(depth.values), depth.values, np.nan).astype("<f4")
    with path.open("wb") as f:
        f.write(_HEADER.pack(MAGIC, depth.width, depth.height, 0))
        f.write(vals.tobytes(order="C"))


def read_depth(path: Path) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, what="depth file")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated depth header")
    magic, w, h, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * w * h
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {w}x{h}, got {len(raw)}")
    vals = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w)
    return DepthMap(vals.astype(np.float64))
