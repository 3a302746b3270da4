"""Frame-to-frame mask association by tracked-point support voting.

Points sampled on the block's first frame carry the global id of the mask
they fell in. Their tracked positions in a later frame vote for the masks
they land in; each mask nominates the tracklet with the most votes, and each
tracklet then takes the nominated mask holding most of its points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, MutableMapping, Sequence, Tuple

import numpy as np

from ..stream.schema import InstanceMask, Tracks
from .schema import EMPTY, UNTRACKED, Tracklet


def filter_tracks(tracks: Tracks, thresh: float) -> np.ndarray:
    """Per (point, frame) keep flag: confidence strictly above ``thresh``."""
    return tracks.conf > float(thresh)


def support_matrix(
    point_ids: np.ndarray,
    us: np.ndarray,
    vs: np.ndarray,
    masks: Sequence[InstanceMask],
    tracklet_ids: Sequence[int],
) -> np.ndarray:
    """``counts[t, m]``: points of tracklet ``tracklet_ids[t]`` at integer pixel (u, v) inside mask m."""
    ids = np.asarray(point_ids, dtype=np.int64).reshape(-1)
    us = np.asarray(us, dtype=np.int64).reshape(-1)
    vs = np.asarray(vs, dtype=np.int64).reshape(-1)
    counts = np.zeros((len(tracklet_ids), len(masks)), dtype=np.int64)
    if ids.size == 0 or not masks or not len(tracklet_ids):
        return counts
    row_of = {int(g): r for r, g in enumerate(tracklet_ids)}
    rows = np.array([row_of.get(int(g), -1) for g in ids], dtype=np.int64)
    for c, m in enumerate(masks):
        h, w = m.mask.shape
        ok = (rows >= 0) & (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
        inside = np.zeros(ids.size, dtype=bool)
        inside[ok] = m.mask[vs[ok], us[ok]]
        if inside.any():
            counts[:, c] = np.bincount(rows[inside], minlength=len(tracklet_ids))
    return counts


@dataclass
class Assignment:
    matches: List[Tuple[int, int]] = field(default_factory=list)  # (row, column)
    unmatched_rows: List[int] = field(default_factory=list)
    unmatched_cols: List[int] = field(default_factory=list)


def mutual_assign(
    support: np.ndarray,
    tracklet_classes: Sequence[str],
    mask_classes: Sequence[str],
) -> Assignment:
    """Candidate-then-choose matching on a support matrix.

    Rows must be ordered by ascending global id so that ties go to the older
    tracklet; column ties go to the smaller mask index.
    """
    S = np.asarray(support, dtype=np.int64).copy()
    T, M = S.shape if S.ndim == 2 else (len(tracklet_classes), len(mask_classes))
    S = S.reshape(T, M)
    if T and M:
        gate = np.array([[tc == mc for mc in mask_classes] for tc in tracklet_classes], dtype=bool)
        S[~gate] = 0
    candidate = np.full(M, -1, dtype=np.int64)
    for c in range(M):
        if T and S[:, c].max() > 0:
            candidate[c] = int(np.argmax(S[:, c]))
    out = Assignment()
    taken = set()
    for r in range(T):
        cols = np.flatnonzero(candidate == r)
        if cols.size == 0:
            out.unmatched_rows.append(r)
            continue
        c = int(cols[np.argmax(S[r, cols])])
        out.matches.append((r, c))
        taken.add(c)
    out.unmatched_cols = [c for c in range(M) if c not in taken]
    return out


@dataclass
class FrameUpdate:
    assigned: Dict[int, int] = field(default_factory=dict)  # mask index -> global id
    new_ids: List[int] = field(default_factory=list)
    untracked: List[Tracklet] = field(default_factory=list)

    @property
    def n_untracked(self) -> int:
        return len(self.untracked)


def update_tracklets(
    tracklets: MutableMapping[int, Tracklet],
    matches: Sequence[Tuple[int, int, int]],
    unmatched_masks: Sequence[int],
    mask_classes: Sequence[str],
    position: int,
    allocate: Callable[[str], int],
) -> FrameUpdate:
    """Extend tracklets with one frame.

    ``matches`` holds ``(global_id, mask_index, support)``. Unmatched masks
    start a tracklet with a freshly allocated id on block frame 0. Anywhere
    else they become single-record tracklets with ``global_id = UNTRACKED``,
    returned in ``untracked`` and never added to ``tracklets``.
    """
    upd = FrameUpdate()
    hit = set()
    for gid, m, n in matches:
        tr = tracklets.get(gid)
        if tr is None:
            tr = Tracklet(global_id=int(gid), class_label=str(mask_classes[m]), start=int(position), is_new=False)
            tracklets[gid] = tr
        tr.record(m, n)
        upd.assigned[int(m)] = int(gid)
        hit.add(gid)
    for gid, tr in tracklets.items():
        if gid not in hit:
            tr.record(EMPTY, 0)
    for m in unmatched_masks:
        if position == 0:
            gid = int(allocate(mask_classes[m]))
            tr = Tracklet(global_id=gid, class_label=str(mask_classes[m]), start=0, is_new=True)
            tr.record(m, 0)
            tracklets[gid] = tr
            upd.assigned[int(m)] = gid
            upd.new_ids.append(gid)
        else:
            tr = Tracklet(global_id=UNTRACKED, class_label=str(mask_classes[m]), start=int(position), is_new=False)
            tr.record(m, 0)
            upd.untracked.append(tr)
    return upd
