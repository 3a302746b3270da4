"""PLY point clouds (x, y, z float32; red, green, blue uchar; object_id uint32), read and written with plyfile."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from ..errors import DataError, MissingFile, ParseError
from ..geometry import PointCloud

VERTEX_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
        ("object_id", "<u4"),
    ]
)

DEFAULT_COLOR = (200, 200, 200)


def write_ply(path: Path, cloud: PointCloud) -> None:
    """Write ``cloud`` as a binary little-endian PLY with one ``vertex`` element."""
    n = len(cloud)
    v = np.zeros(n, dtype=VERTEX_DTYPE)
    v["x"], v["y"], v["z"] = (cloud.points[:, i].astype(np.float32) for i in range(3))
    rgb = cloud.colors if cloud.colors is not None else np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (n, 1))
    v["red"], v["green"], v["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    if cloud.object_ids is not None:
        if n and (cloud.object_ids.min() < 0 or cloud.object_ids.max() > np.iinfo(np.uint32).max):
            raise DataError("object ids must fit in uint32")
        v["object_id"] = cloud.object_ids.astype(np.uint32)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(v, "vertex")], text=False, byte_order="<").write(str(path))


def read_ply(path: Path) -> PointCloud:
    """Read the ``vertex`` element of any PLY plyfile understands (ascii or binary)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, "PLY")
    try:
        ply = PlyData.read(str(path), mmap=False)
    except PlyParseError as e:
        raise ParseError(path, getattr(e, "line", None) or 0, str(e)) from e
    except (UnicodeDecodeError, ValueError) as e:
        raise ParseError(path, 0, f"unreadable PLY: {e}") from e
    if "vertex" not in [el.name for el in ply.elements]:
        raise DataError(f"{path}: no vertex element")
    v = ply["vertex"].data
    names = set(v.dtype.names or ())
    if not {"x", "y", "z"} <= names:
        raise DataError(f"{path}: vertices lack x/y/z")
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(float).reshape(-1, 3)
    colors = (
        np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.uint8).reshape(-1, 3)
        if {"red", "green", "blue"} <= names
        else None
    )
    ids = np.asarray(v["object_id"]).astype(np.int64) if "object_id" in names else None
    return PointCloud(points=pts, colors=colors, object_ids=ids)
