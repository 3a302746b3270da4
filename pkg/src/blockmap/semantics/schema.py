from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Tuple

import numpy as np

from ..change.schema import RECENT, REMOVED, RETAINED, ObjectState
from ..errors import ConfigError, EmptyObject, InvariantViolation
from ..alignment.voxel import VoxelCloud

UNTRACKED = -1
EMPTY = -1  # tracklet record for a frame without a matching mask


@dataclass(frozen=True)
class TrackerConfig:
    track_conf_thresh: float = 0.1
    grid_stride: int = 8
    erosion_radius: int = 1
    bbox_iou_thresh: float = 0.25
    chamfer_thresh: float = 0.30
    # pixel stride for lifting mask pixels into object clouds
    cloud_stride: int = 2
    object_voxel_size: float = 0.02
    max_median_points: int = 2000

    def validate(self) -> None:
        if not (0.0 <= float(self.track_conf_thresh) <= 1.0):
            raise ConfigError(f"tracker.track_conf_thresh must lie in [0, 1], got {self.track_conf_thresh}")
        if int(self.grid_stride) < 1 or int(self.cloud_stride) < 1:
            raise ConfigError("tracker.grid_stride and tracker.cloud_stride must be >= 1")
        if int(self.erosion_radius) < 0:
            raise ConfigError(f"tracker.erosion_radius must be >= 0, got {self.erosion_radius}")
        if not (0.0 <= float(self.bbox_iou_thresh) <= 1.0):
            raise ConfigError(f"tracker.bbox_iou_thresh must lie in [0, 1], got {self.bbox_iou_thresh}")
        if float(self.chamfer_thresh) <= 0.0:
            raise ConfigError(f"tracker.chamfer_thresh must be > 0, got {self.chamfer_thresh}")
        if float(self.object_voxel_size) < 0.0:
            raise ConfigError("tracker.object_voxel_size must be >= 0")
        if int(self.max_median_points) < 1:
            raise ConfigError("tracker.max_median_points must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class Tracklet:
    """Detections chained to one global id within the current block.

    ``records[p]`` is the mask index assigned at block frame ``start + p`` or
    ``EMPTY``; ``support[p]`` the number of tracked points that voted for it.
    """

    global_id: int
    class_label: str
    start: int
    is_new: bool
    records: List[int] = field(default_factory=list)
    support: List[int] = field(default_factory=list)

    def record(self, mask_index: int, n_support: int) -> None:
        self.records.append(int(mask_index))
        self.support.append(int(n_support))

    @property
    def n_detections(self) -> int:
        return sum(1 for r in self.records if r != EMPTY)


@dataclass(eq=False)
class GlobalObject:
    global_id: int
    class_label: str
    cloud: VoxelCloud
    first_seen: int
    last_seen: int
    created_block: int
    last_detected_block: int
    state: str = RECENT
    confidence: float = 1.0
    median_frames: List[int] = field(default_factory=list)
    median_points: List[Tuple[float, float, float]] = field(default_factory=list)

    def add_observation(self, frame_index: int, points: np.ndarray, max_median_points: int) -> None:
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        if P.shape[0] == 0:
            return
        self.cloud.insert(P, np.full(P.shape[0], int(frame_index), dtype=np.int64))
        self.median_frames.append(int(frame_index))
        self.median_points.append(tuple(float(x) for x in np.median(P, axis=0)))
        if len(self.median_points) > max_median_points:
            del self.median_frames[: len(self.median_frames) - max_median_points]
            del self.median_points[: len(self.median_points) - max_median_points]

    @property
    def object_state(self) -> ObjectState:
        return ObjectState(self.state, self.confidence)

    def median_cloud(self) -> np.ndarray:
        return np.asarray(self.median_points, dtype=float).reshape(-1, 3)

    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        if len(self.cloud) == 0:
            raise EmptyObject(f"object {self.global_id} has no points")
        return self.cloud.points.min(axis=0), self.cloud.points.max(axis=0)

    def centroid(self) -> np.ndarray:
        if len(self.cloud) == 0:
            raise EmptyObject(f"object {self.global_id} has no points")
        return np.median(self.cloud.points, axis=0)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "global_id": int(self.global_id),
            "class": self.class_label,
            "state": self.state,
            "confidence": float(self.confidence),
            "first_seen": int(self.first_seen),
            "last_seen": int(self.last_seen),
            "n_points": len(self.cloud),
            "median_points": [
                {"frame_index": f, "point": list(p)} for f, p in zip(self.median_frames, self.median_points)
            ],
        }
        if len(self.cloud):
            lo, hi = self.bbox()
            d["centroid"] = [float(x) for x in self.centroid()]
            d["bbox"] = {"min": [float(x) for x in lo], "max": [float(x) for x in hi]}
        else:
            d["centroid"] = None
            d["bbox"] = None
        return d


@dataclass(eq=False)
class ObjectRegistry:
    """Global objects by id. Ids start at 1 and are never reused."""

    voxel_size: float = 0.02
    objects: Dict[int, GlobalObject] = field(default_factory=dict)
    next_id: int = 1
    n_created: int = 0
    n_untracked: int = 0
    # merged id -> surviving id
    aliases: Dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self) -> Iterator[GlobalObject]:
        for gid in sorted(self.objects):
            yield self.objects[gid]

    def __contains__(self, gid: object) -> bool:
        return gid in self.objects

    def get(self, gid: int) -> GlobalObject:
        try:
            return self.objects[int(gid)]
        except KeyError:
            raise InvariantViolation(f"unknown global id {gid}") from None

    def create(self, class_label: str, block_index: int, frame_index: int) -> GlobalObject:
        gid = self.next_id
        self.next_id += 1
        self.n_created += 1
        obj = GlobalObject(
            global_id=gid,
            class_label=str(class_label),
            cloud=VoxelCloud(self.voxel_size),
            first_seen=int(frame_index),
            last_seen=int(frame_index),
            created_block=int(block_index),
            last_detected_block=int(block_index),
        )
        self.objects[gid] = obj
        return obj

    def merge(self, src_id: int, dst_id: int, max_median_points: int) -> GlobalObject:
        """Fold object ``src_id`` into ``dst_id`` and retire ``src_id``."""
        src = self.get(src_id)
        dst = self.get(dst_id)
        if src.class_label != dst.class_label:
            raise InvariantViolation(f"refusing to merge {src.class_label} object {src_id} into {dst.class_label} {dst_id}")
        dst.cloud.insert(src.cloud.points, src.cloud.frame_indices)
        pairs = sorted(zip(dst.median_frames + src.median_frames, dst.median_points + src.median_points), key=lambda x: x[0])
        pairs = pairs[-max_median_points:]
        dst.median_frames = [f for f, _ in pairs]
        dst.median_points = [p for _, p in pairs]
        dst.first_seen = min(dst.first_seen, src.first_seen)
        dst.last_seen = max(dst.last_seen, src.last_seen)
        dst.last_detected_block = max(dst.last_detected_block, src.last_detected_block)
        del self.objects[src_id]
        self.aliases[int(src_id)] = int(dst_id)
        return dst

    def with_states(self, states: Iterable[str] = (RECENT, RETAINED)) -> List[GlobalObject]:
        wanted = set(states)
        return [o for o in self if o.state in wanted]

    def live_count(self) -> int:
        return sum(1 for o in self if o.state != REMOVED)

    def to_dict(self) -> Dict[str, Any]:
        return {"objects": [o.to_dict() for o in self], "n_created": int(self.n_created), "n_untracked": int(self.n_untracked)}
