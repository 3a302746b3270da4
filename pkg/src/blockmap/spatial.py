"""Ego position and object distance queries over a registry snapshot."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .change.schema import RECENT, RETAINED
from .errors import EmptyObject
from .geometry import ExtrinsicPose, PointCloud
from .semantics.schema import GlobalObject, ObjectRegistry

DEFAULT_STATES = (RECENT, RETAINED)


@dataclass(frozen=True)
class EgoState:
    frame_index: int
    center: Tuple[float, float, float]

    @staticmethod
    def from_pose(frame_index: int, pose: ExtrinsicPose) -> "EgoState":
        return EgoState(int(frame_index), tuple(float(x) for x in pose.center))


@dataclass(frozen=True)
class ObjectDistance:
    global_id: int
    class_label: str
    state: str
    distance: float

    def to_dict(self) -> Dict[str, Any]:
        return {"global_id": self.global_id, "class": self.class_label, "state": self.state, "distance": self.distance}


def object_centroid(cloud: PointCloud | np.ndarray) -> np.ndarray:
    """Component-wise median of the object's points."""
    P = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        raise EmptyObject("centroid of an empty cloud")
    return np.median(P, axis=0)


def _centroids(registry: ObjectRegistry, states: Iterable[str]) -> List[Tuple[GlobalObject, np.ndarray]]:
    return [(o, object_centroid(o.cloud.points)) for o in registry.with_states(states) if len(o.cloud)]


def distances(
    ego: EgoState,
    registry: ObjectRegistry,
    include_states: Sequence[str] = DEFAULT_STATES,
) -> List[ObjectDistance]:
    """Distance from the camera to each object centroid, nearest first (ties by id)."""
    c = np.asarray(ego.center, dtype=float)
    out = [
        ObjectDistance(o.global_id, o.class_label, o.state, float(np.linalg.norm(p - c)))
        for o, p in _centroids(registry, include_states)
    ]
    out.sort(key=lambda d: (d.distance, d.global_id))
    return out


def pairwise_distances(
    registry: ObjectRegistry,
    include_states: Sequence[str] = DEFAULT_STATES,
) -> List[Dict[str, Any]]:
    cs = _centroids(registry, include_states)
    out = []
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            a, pa = cs[i]
            b, pb = cs[j]
            out.append({"a": a.global_id, "b": b.global_id, "distance": float(np.linalg.norm(pa - pb))})
    return out


def colocated(
    registry: ObjectRegistry,
    class_a: str,
    class_b: str,
    radius: float,
    include_states: Sequence[str] = DEFAULT_STATES,
) -> List[Tuple[int, int, float]]:
    """Pairs (a of class_a, b of class_b) whose centroids lie within ``radius``; e.g. a bag on a chair."""
    cs = _centroids(registry, include_states)
    out = []
    for a, pa in cs:
        if a.class_label != class_a:
            continue
        for b, pb in cs:
            if b.class_label != class_b or b.global_id == a.global_id:
                continue
            d = float(np.linalg.norm(pa - pb))
            if d <= radius:
                out.append((a.global_id, b.global_id, d))
    return sorted(out, key=lambda t: (t[2], t[0], t[1]))
