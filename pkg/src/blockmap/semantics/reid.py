"""Re-identification of new objects against past ones."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyCloud

# (global id, class label, box min, box max)
BoxEntry = Tuple[int, str, np.ndarray, np.ndarray]
# (global id, class label, median points)
CloudEntry = Tuple[int, str, np.ndarray]


def bbox_iou(lo_a: np.ndarray, hi_a: np.ndarray, lo_b: np.ndarray, hi_b: np.ndarray) -> float:
    lo_a, hi_a, lo_b, hi_b = (np.asarray(x, dtype=float) for x in (lo_a, hi_a, lo_b, hi_b))
    inter = float(np.prod(np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0, None)))
    union = float(np.prod(hi_a - lo_a) + np.prod(hi_b - lo_b) - inter)
    if union <= 0.0:
        return 0.0
    return inter / union


def reid_bbox(
    new: Sequence[BoxEntry],
    existing: Sequence[BoxEntry],
    iou_thresh: float,
    pad: float = 0.0,
) -> List[Tuple[int, int, float]]:
    """Greedy best-first matching on axis-aligned box IoU.

    Boxes are inflated by ``pad`` on every side so flat single-view clouds
    still have a volume. Returns ``(new id, existing id, iou)``.
    """
    pairs = []
    for gn, cn, lon, hin in new:
        for ge, ce, loe, hie in existing:
            if cn != ce:
                continue
            iou = bbox_iou(np.asarray(lon) - pad, np.asarray(hin) + pad, np.asarray(loe) - pad, np.asarray(hie) + pad)
            if iou > iou_thresh:
                pairs.append((-iou, int(gn), int(ge)))
    pairs.sort()
    out: List[Tuple[int, int, float]] = []
    used_n, used_e = set(), set()
    for neg, gn, ge in pairs:
        if gn in used_n or ge in used_e:
            continue
        used_n.add(gn)
        used_e.add(ge)
        out.append((gn, ge, -neg))
    return out


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance: mean of the two directed mean nearest-neighbour distances."""
    A = np.asarray(a, dtype=float).reshape(-1, 3)
    B = np.asarray(b, dtype=float).reshape(-1, 3)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptyCloud("chamfer distance needs two non-empty clouds")
    dab, _ = cKDTree(B).query(A)
    dba, _ = cKDTree(A).query(B)
    return 0.5 * (float(np.mean(dab)) + float(np.mean(dba)))


def reid_chamfer(
    cloud: np.ndarray,
    class_label: str,
    historical: Sequence[CloudEntry],
    thresh: float,
) -> Optional[Tuple[int, float]]:
    """Closest same-class historical median cloud, if strictly closer than ``thresh``."""
    best: Optional[Tuple[float, int]] = None
    for gid, cls, hist in historical:
        if cls != class_label or len(hist) == 0:
            continue
        d = chamfer(cloud, hist)
        if best is None or (d, int(gid)) < best:
            best = (d, int(gid))
    if best is None or best[0] >= thresh:
        return None
    return best[1], best[0]
