"""Object persistence: visibility reasoning and confidence decay.

After each block, every object that was not detected is projected into the
block's last frame. Objects outside the view are kept as they are; objects
whose points are hidden behind closer observed surfaces are kept too (they
may just be occluded). Only an object that should have been seen, and was
not, loses confidence; when the confidence reaches zero it is removed. A
detection always restores it to Recent with full confidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional

import numpy as np

from ..errors import EmptyObject
from ..geometry import DepthMap, ExtrinsicPose, Intrinsics, PointCloud, project
from .schema import (
    APPEARED,
    BECAME_RETAINED,
    CONFIDENCE_DECAYED,
    RECENT,
    REDETECTED,
    REMOVED,
    REMOVED_EVENT,
    RETAINED,
    ChangeConfig,
    ChangeEvent,
    ObjectState,
)

if TYPE_CHECKING:  # pragma: no cover
    from ..alignment.schema import BlockState
    from ..semantics.schema import GlobalObject, ObjectRegistry
    from ..semantics.tracker import BlockTracking

logger = logging.getLogger(__name__)

# confidences this close to zero after a decay step count as zero
_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class Visibility:
    f_vis: float
    area_fraction: float
    in_fov: bool
    n_projected: int


def visible_fraction(
    points: PointCloud | np.ndarray,
    pose: ExtrinsicPose,
    K: Intrinsics,
    depth: Optional[DepthMap],
    delta: float,
) -> Visibility:
    X = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float).reshape(-1, 3)
    if X.shape[0] == 0:
        raise EmptyObject("visibility needs a non-empty object cloud")
    pr = project(X, K, pose)
    ui, vi, inb = pr.pixels(K.width, K.height)
    n = int(inb.sum())
    if n == 0:
        return Visibility(f_vis=0.0, area_fraction=0.0, in_fov=False, n_projected=0)
    u, v = ui[inb], vi[inb]
    z = pr.z[inb]
    if depth is None:
        visible = np.ones(n, dtype=bool)
    else:
        z_obs = depth.values[v, u]
        visible = ~np.isfinite(z_obs) | (z <= z_obs + float(delta))
    area = np.unique(v * K.width + u).size / float(K.width * K.height)
    return Visibility(f_vis=float(visible.sum()) / n, area_fraction=float(area), in_fov=True, n_projected=n)


def update_object_state(
    state: ObjectState,
    detected: bool,
    vis: Optional[Visibility],
    cfg: ChangeConfig,
) -> ObjectState:
    if detected:
        return ObjectState(RECENT, 1.0)
    if state.state == REMOVED:
        return state
    c = float(state.confidence)
    if vis is None or not vis.in_fov:
        return ObjectState(RETAINED, c)
    if vis.f_vis > cfg.tau_vis and vis.area_fraction > cfg.tau_area:
        c = c - float(cfg.eta)
        if c <= _ZERO_TOL:
            return ObjectState(REMOVED, 0.0)
        return ObjectState(RETAINED, c)
    return ObjectState(RETAINED, c)


def _visibility(obj: "GlobalObject", bs: "BlockState", p: int, cfg: ChangeConfig) -> Optional[Visibility]:
    if len(obj.cloud) == 0:
        return None
    frame = bs.frames[p]
    depth = bs.block_depth(p)
    if depth is None:
        depth = frame.sensor_depth
    return visible_fraction(obj.cloud.points, bs.block_aligned[p], frame.intrinsics, depth, cfg.delta)


def _event_kind(prev: ObjectState, new: ObjectState, detected: bool, appeared: bool) -> Optional[str]:
    if appeared:
        return APPEARED
    if detected:
        return REDETECTED if prev.state != RECENT else None
    if new.state == REMOVED and prev.state != REMOVED:
        return REMOVED_EVENT
    if new.confidence < prev.confidence:
        return CONFIDENCE_DECAYED
    if prev.state == RECENT and new.state == RETAINED:
        return BECAME_RETAINED
    return None


def run_block_update(
    registry: "ObjectRegistry",
    bs: "BlockState",
    tracking: "BlockTracking",
    cfg: ChangeConfig,
) -> List[ChangeEvent]:
    """Update every object's state for one block; returns at most one event per object."""
    last = len(bs.frames) - 1
    positions = range(len(bs.frames)) if cfg.evaluate_every_frame else (last,)
    stamps = {int(f.frame_index): float(f.timestamp) for f in bs.frames}
    appeared = set(tracking.new_ids)
    events: List[ChangeEvent] = []
    for obj in registry:
        detected = obj.global_id in tracking.last_detection
        prev = obj.object_state
        if prev.state == REMOVED and not detected:
            continue
        new = prev
        if detected:
            new = update_object_state(prev, True, None, cfg)
        else:
            for p in positions:
                new = update_object_state(new, False, _visibility(obj, bs, p, cfg), cfg)
                if new.state == REMOVED:
                    break
        obj.state, obj.confidence = new.state, new.confidence
        kind = _event_kind(prev, new, detected, obj.global_id in appeared)
        if kind is None:
            continue
        fi = tracking.last_detection[obj.global_id] if detected else int(bs.frames[last].frame_index)
        events.append(
            ChangeEvent(
                block_index=bs.block_index,
                frame_index=fi,
                timestamp=stamps.get(fi, 0.0),
                global_id=obj.global_id,
                event=kind,
                confidence_after=new.confidence,
                class_label=obj.class_label,
            )
        )
    for e in events:
        logger.debug("block %d: object %d %s (c=%.3f)", e.block_index, e.global_id, e.event, e.confidence_after)
    return events
