"""Per-block integration of 2-D detections into persistent 3-D objects."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from ..alignment.schema import BlockState, GlobalMap
from ..errors import InvariantViolation
from ..geometry import pixel_index, unproject_pixels
from ..stream.schema import BACKGROUND, InstanceMask
from .association import filter_tracks, mutual_assign, support_matrix, update_tracklets
from .masks import erode_all, label_image, sample_grid
from .reid import reid_bbox, reid_chamfer
from .schema import ObjectRegistry, TrackerConfig, Tracklet

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BlockTracking:
    block_index: int
    tracklets: Dict[int, Tracklet]
    new_ids: List[int]  # born this block and not merged into an older object
    merges: List[Tuple[int, int, str]] = field(default_factory=list)  # (new id, kept id, method)
    untracked: List[Tracklet] = field(default_factory=list)  # global_id UNTRACKED, never merged
    last_detection: Dict[int, int] = field(default_factory=dict)  # global id -> frame index

    @property
    def n_untracked(self) -> int:
        return len(self.untracked)

    @property
    def detected(self) -> List[int]:
        return sorted(self.last_detection)

    def to_report(self) -> Dict[str, Any]:
        return {
            "detected": self.detected,
            "new_objects": list(self.new_ids),
            "merges": [{"new": a, "kept": b, "method": m} for a, b, m in self.merges],
            "untracked": int(self.n_untracked),
        }


def _initial_labels(gmap: GlobalMap, bs: BlockState, registry: ObjectRegistry, cfg: TrackerConfig) -> np.ndarray:
    """Global id (or BACKGROUND) of every query point, taken from the first anchor's stored assignment."""
    n_q = bs.output.tracks.n_points
    labels = np.full(n_q, BACKGROUND, dtype=np.int64)
    if not bs.n_anchors:
        return labels
    f0 = bs.block.anchors[0]
    stored = gmap.keyframe_assignments.get(int(f0.frame_index), {})
    eroded = erode_all(f0.masks, cfg.erosion_radius)
    K = f0.intrinsics
    _, _, grid = sample_grid([m for _, m in eroded], cfg.grid_stride, K.width, K.height)
    if grid.shape[0] != n_q:
        raise InvariantViolation(f"track query grid has {n_q} points, expected {grid.shape[0]} at stride {cfg.grid_stride}")
    for local, (orig, _) in enumerate(eroded):
        gid = stored.get(orig)
        if gid is not None and gid in registry:
            labels[grid == local] = gid
    return labels


def _lift(mask: InstanceMask, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    vs, us = np.nonzero(mask.mask[::stride, ::stride])
    return us * stride, vs * stride


def _reidentify(tr: BlockTracking, registry: ObjectRegistry, cfg: TrackerConfig) -> None:
    observed = set(tr.last_detection)
    targets = [o for o in registry if o.global_id not in observed and len(o.cloud)]
    cands = [registry.get(g) for g in tr.new_ids if len(registry.get(g).cloud)]
    if not targets or not cands:
        return
    merges: List[Tuple[int, int, str]] = [
        (gn, ge, "bbox")
        for gn, ge, _ in reid_bbox(
            [(o.global_id, o.class_label, *o.bbox()) for o in cands],
            [(o.global_id, o.class_label, *o.bbox()) for o in targets],
            cfg.bbox_iou_thresh,
            pad=0.5 * cfg.object_voxel_size,
        )
    ]
    used_new = {m[0] for m in merges}
    used_old = {m[1] for m in merges}
    for o in cands:
        if o.global_id in used_new or not o.median_points:
            continue
        hist = [(t.global_id, t.class_label, t.median_cloud()) for t in targets if t.global_id not in used_old and t.median_points]
        hit = reid_chamfer(o.median_cloud(), o.class_label, hist, cfg.chamfer_thresh)
        if hit is not None:
            merges.append((o.global_id, hit[0], "chamfer"))
            used_new.add(o.global_id)
            used_old.add(hit[0])

    for gn, ge, how in merges:
        registry.merge(gn, ge, cfg.max_median_points)
        t = tr.tracklets.pop(gn)
        t.global_id = ge
        tr.tracklets[ge] = t
        tr.last_detection[ge] = tr.last_detection.pop(gn)
        logger.info("block %d: object %d re-identified as %d (%s)", tr.block_index, gn, ge, how)
    tr.merges = merges
    tr.new_ids = [g for g in tr.new_ids if g not in used_new]


def integrate_block(gmap: GlobalMap, bs: BlockState, registry: ObjectRegistry, cfg: TrackerConfig) -> BlockTracking:
    """Associate the block's masks frame by frame, grow object clouds, then re-identify.

    Replaces ``gmap.keyframe_assignments`` with the mask-to-object assignment
    of this block's keyframes, which seeds the next block's point labels.
    """
    tracks = bs.output.tracks
    keep = filter_tracks(tracks, cfg.track_conf_thresh)
    labels = _initial_labels(gmap, bs, registry, cfg)
    tr = BlockTracking(block_index=bs.block_index, tracklets={}, new_ids=[])
    kf_positions = set(bs.keyframe_positions)
    kf_assign: Dict[int, Dict[int, int]] = {}

    for p, frame in enumerate(bs.frames):
        j = bs.n_anchors + p
        fi = int(frame.frame_index)
        K = frame.intrinsics
        eroded = erode_all(frame.masks, cfg.erosion_radius)
        emasks = [m for _, m in eroded]
        u, v, inside = pixel_index(tracks.uv[:, j, 0], tracks.uv[:, j, 1], K.width, K.height)
        inb = keep[:, j] & inside

        voting = inb & (labels != BACKGROUND)
        row_ids = sorted({int(g) for g in labels[voting]})
        S = support_matrix(labels[voting], u[voting], v[voting], emasks, row_ids)
        m_cls = [m.class_label for m in emasks]
        a = mutual_assign(S, [registry.get(g).class_label for g in row_ids], m_cls)
        upd = update_tracklets(
            tr.tracklets,
            [(row_ids[r], c, int(S[r, c])) for r, c in a.matches],
            a.unmatched_cols,
            m_cls,
            p,
            allocate=lambda cls: registry.create(cls, bs.block_index, fi).global_id,
        )
        tr.new_ids.extend(upd.new_ids)
        tr.untracked.extend(upd.untracked)

        if upd.assigned:
            idx = np.flatnonzero(inb)
            hit = label_image(emasks, K.width, K.height)[v[idx], u[idx]]
            for local, gid in upd.assigned.items():
                labels[idx[hit == local]] = gid

        depth = bs.block_depth(p)
        E = bs.block_aligned[p]
        for local, gid in sorted(upd.assigned.items()):
            us, vs = _lift(emasks[local], cfg.cloud_stride)
            P, _ = unproject_pixels(depth, K, E, us, vs)
            obj = registry.get(gid)
            obj.add_observation(fi, P, cfg.max_median_points)
            obj.last_seen = max(obj.last_seen, fi)
            obj.last_detected_block = bs.block_index
            tr.last_detection[gid] = fi
        if p in kf_positions:
            kf_assign[fi] = {eroded[local][0]: gid for local, gid in upd.assigned.items()}

    _reidentify(tr, registry, cfg)
    alias = {gn: ge for gn, ge, _ in tr.merges}
    gmap.keyframe_assignments = {f: {m: alias.get(g, g) for m, g in a.items()} for f, a in kf_assign.items()}
    registry.n_untracked += tr.n_untracked
    if tr.n_untracked:
        logger.warning("block %d: %d detections left untracked", bs.block_index, tr.n_untracked)
    return tr
