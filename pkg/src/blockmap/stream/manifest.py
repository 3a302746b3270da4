from __future__ import annotations

import json
import logging
from array import array
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import DataError, MalformedManifest, MissingFile, NonMonotoneIndex
from ..geometry import ExtrinsicPose, Intrinsics
from .depth_io import read_depth, write_depth
from .schema import FrameRecord, InstanceMask

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
_REQUIRED = ("frame_index", "timestamp", "intrinsics")


@dataclass(frozen=True)
class ManifestEntry:
    line_no: int
    obj: Dict[str, Any]

    @property
    def frame_index(self) -> int:
        return int(self.obj["frame_index"])


def _resolve(base_dir: Path, p: Optional[str]) -> Optional[Path]:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base_dir / q


def _parse_line(path: Path, line_no: int, raw: bytes) -> Dict[str, Any]:
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedManifest(f"{path}:{line_no}: invalid JSON ({getattr(e, 'msg', e)})") from None
    if not isinstance(obj, dict):
        raise MalformedManifest(f"{path}:{line_no}: expected a JSON object")
    for k in _REQUIRED:
        if k not in obj:
            raise MalformedManifest(f"{path}:{line_no}: missing field '{k}'")
    try:
        int(obj["frame_index"])
        float(obj["timestamp"])
    except (TypeError, ValueError):
        raise MalformedManifest(f"{path}:{line_no}: frame_index/timestamp not numeric") from None
    return obj


def _index_entries(path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate every line once and keep (frame_index, byte offset, line number), sorted by frame_index."""
    fis, offsets, lines = array("q"), array("q"), array("q")
    pos = 0
    with path.open("rb") as f:
        for i, raw in enumerate(f, start=1):
            if raw.strip():
                obj = _parse_line(path, i, raw)
                fis.append(int(obj["frame_index"]))
                offsets.append(pos)
                lines.append(i)
            pos += len(raw)
    fi = np.asarray(fis, dtype=np.int64)
    order = np.argsort(fi, kind="stable")
    fi = fi[order]
    off = np.asarray(offsets, dtype=np.int64)[order]
    ln = np.asarray(lines, dtype=np.int64)[order]
    rep = np.flatnonzero(np.diff(fi) <= 0)
    if rep.size:
        j = int(rep[0])
        raise NonMonotoneIndex(f"{path}: frame_index {fi[j + 1]} repeated (lines {ln[j]} and {ln[j + 1]})")
    return fi, off, ln


def load_frame(entry: ManifestEntry, base_dir: Path, source: Path) -> FrameRecord:
    obj = entry.obj
    where = f"{source}:{entry.line_no}"
    try:
        K = Intrinsics.from_dict(obj["intrinsics"])
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedManifest(f"{where}: bad intrinsics ({e})") from None
    except DataError as e:
        raise MalformedManifest(f"{where}: {e}") from None

    sensor_path = _resolve(base_dir, obj.get("depth_sensor"))
    pred_path = _resolve(base_dir, obj.get("depth_pred"))
    sensor = read_depth(sensor_path) if sensor_path is not None else None
    if pred_path is not None and not pred_path.exists():
        raise MissingFile(pred_path, what="depth file")

    pose = None
    if obj.get("pose") is not None:
        try:
            pose = ExtrinsicPose.from_row12(obj["pose"])
        except DataError as e:
            raise MalformedManifest(f"{where}: {e}") from None

    masks = []
    for j, m in enumerate(obj.get("masks") or []):
        try:
            masks.append(InstanceMask.from_dict(m, K.width, K.height))
        except (KeyError, TypeError) as e:
            raise MalformedManifest(f"{where}: masks[{j}] missing {e}") from None
        except DataError as e:
            raise MalformedManifest(f"{where}: masks[{j}]: {e}") from None

    score = obj.get("feature_score")
    try:
        return FrameRecord(
            frame_index=int(obj["frame_index"]),
            timestamp=float(obj["timestamp"]),
            intrinsics=K,
            sensor_depth=sensor,
            masks=tuple(masks),
            feature_score=None if score is None else float(score),
            pose=pose,
            depth_sensor_path=obj.get("depth_sensor"),
            depth_pred_path=obj.get("depth_pred"),
            rgb_path=obj.get("rgb"),
        )
    except DataError as e:
        raise MalformedManifest(f"{where}: {e}") from None


class FrameStream:
    """Lazy, frame_index-ordered view of a manifest.

    Every line is validated up front so ordering and monotonicity errors
    surface immediately, but only frame indices and byte offsets are kept;
    a frame's JSON, depth payloads and masks are read back as it is yielded.
    """

    def __init__(self, manifest_path: Path) -> None:
        self.path = Path(manifest_path)
        if not self.path.exists():
            raise MissingFile(self.path, what="manifest")
        self.base_dir = self.path.parent
        self._frame_index, self._offset, self._line = _index_entries(self.path)

    def __len__(self) -> int:
        return int(self._frame_index.size)

    @property
    def frame_indices(self) -> List[int]:
        return [int(x) for x in self._frame_index]

    def __iter__(self) -> Iterator[FrameRecord]:
        with self.path.open("rb") as f:
            for off, line_no in zip(self._offset, self._line):
                f.seek(int(off))
                entry = ManifestEntry(line_no=int(line_no), obj=_parse_line(self.path, int(line_no), f.readline()))
                yield load_frame(entry, self.base_dir, self.path)


def open_stream(manifest_path: Path) -> FrameStream:
    p = Path(manifest_path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    return FrameStream(p)


def frame_to_dict(rec: FrameRecord) -> Dict[str, Any]:
    return {
        "frame_index": int(rec.frame_index),
        "timestamp": float(rec.timestamp),
        "depth_sensor": rec.depth_sensor_path,
        "depth_pred": rec.depth_pred_path,
        "pose": None if rec.pose is None else rec.pose.to_row12(),
        "intrinsics": rec.intrinsics.to_dict(),
        "feature_score": None if rec.feature_score is None else float(rec.feature_score),
        "masks": [m.to_dict() for m in rec.masks],
        "rgb": rec.rgb_path,
    }


def write_stream(records: Iterable[FrameRecord], out_dir: Path) -> Path:
    """Write frames as a manifest plus depth files; returns the manifest path.

    Frames holding an in-memory sensor depth without a path get one under
    ``depth/``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / MANIFEST_NAME
    n = 0
    with manifest.open("w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            obj = frame_to_dict(rec)
            if rec.sensor_depth is not None:
                rel = rec.depth_sensor_path or f"depth/sensor_{rec.frame_index:06d}.dpth"
                write_depth(_resolve(out_dir, rel), rec.sensor_depth)
                obj["depth_sensor"] = rel
            f.write(json.dumps(obj, sort_keys=True) + "\n")
            n += 1
    logger.debug("wrote %d frames to %s", n, manifest)
    return manifest
