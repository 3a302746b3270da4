from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from ..alignment.schema import GlobalMap
from ..errors import MissingFile, ParseError
from ..geometry import PointCloud
from ..semantics.schema import ObjectRegistry
from ..util import append_jsonl, write_json
from .ply import DEFAULT_COLOR, write_ply

BACKGROUND_OBJECT_ID = 0


def class_color(label: str) -> Tuple[int, int, int]:
    """Deterministic per-class colour, kept away from the background grey."""
    h = hashlib.sha256(label.encode("utf-8")).digest()
    return (64 + h[0] % 192, 64 + h[1] % 192, 64 + h[2] % 192)


def map_cloud(gmap: GlobalMap) -> PointCloud:
    n = len(gmap.cloud)
    return PointCloud(
        points=gmap.cloud.points,
        colors=np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (n, 1)),
        object_ids=np.full(n, BACKGROUND_OBJECT_ID, dtype=np.int64),
        frame_indices=gmap.cloud.frame_indices,
    )


def semantic_cloud(gmap: GlobalMap, registry: ObjectRegistry) -> PointCloud:
    """Map points with id 0 followed by every object's cloud, coloured by class."""
    parts = [map_cloud(gmap)]
    for o in registry:
        n = len(o.cloud)
        if n == 0:
            continue
        parts.append(
            PointCloud(
                points=o.cloud.points,
                colors=np.tile(np.array(class_color(o.class_label), dtype=np.uint8), (n, 1)),
                object_ids=np.full(n, o.global_id, dtype=np.int64),
                frame_indices=o.cloud.frame_indices,
            )
        )
    return PointCloud.concat(parts)


def export_map(gmap: GlobalMap, path: Path) -> Path:
    write_ply(path, map_cloud(gmap))
    return Path(path)


def export_semantic_map(gmap: GlobalMap, registry: ObjectRegistry, path: Path) -> Path:
    write_ply(path, semantic_cloud(gmap, registry))
    return Path(path)


def export_objects(registry: ObjectRegistry, path: Path) -> Path:
    write_json(Path(path), registry.to_dict())
    return Path(path)


def read_events(path: Path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, "event log")
    out: List[Dict[str, Any]] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            s = raw.strip()
            if not s:
                continue
            try:
                out.append(json.loads(s))
            except json.JSONDecodeError as e:
                raise ParseError(path, line_no, e.msg) from None
    return out


def export_events(events_path: Path, path: Path) -> Path:
    """Copy the event log sorted by (frame_index, global_id)."""
    events = sorted(read_events(events_path), key=lambda e: (int(e["frame_index"]), int(e["global_id"])))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    append_jsonl(path, events)
    return path
