from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ConfigError, EmptyCloud
from ..geometry import PointCloud
from .trajectory import Similarity, align_umeyama

logger = logging.getLogger(__name__)

AGGREGATES = ("mean", "median")


@dataclass(frozen=True)
class ReconMetrics:
    accuracy: float
    completion: float
    chamfer: float
    n_pred: int
    n_gt: int
    aggregate: str
    alignment: Optional[Similarity] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": float(self.accuracy),
            "completion": float(self.completion),
            "chamfer": float(self.chamfer),
            "n_pred": int(self.n_pred),
            "n_gt": int(self.n_gt),
            "aggregate": self.aggregate,
            "alignment": None if self.alignment is None else self.alignment.to_dict(),
        }


def _points(c: PointCloud | np.ndarray) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)


def _subsample(P: np.ndarray, max_points: int) -> np.ndarray:
    if P.shape[0] <= max_points:
        return P
    return P[:: int(np.ceil(P.shape[0] / max_points))]


def icp_align(
    pred: np.ndarray,
    gt: np.ndarray,
    iterations: int = 20,
    max_points: int = 2000,
    tol: float = 1e-9,
) -> Similarity:
    """Rigid alignment of pred onto gt from nearest-neighbour correspondences, re-estimated each round."""
    tree = cKDTree(gt)
    src = _subsample(pred, max_points)
    total = Similarity()
    prev_err = np.inf
    for _ in range(int(iterations)):
        moved = total.apply(src)
        d, idx = tree.query(moved)
        err = float(np.mean(d))
        if prev_err - err < tol:
            break
        prev_err = err
        step = align_umeyama(moved, gt[idx], with_scale=False, strict=False)
        total = Similarity(1.0, step.R @ total.R, step.R @ total.t + step.t)
    return total


def recon_metrics(
    pred: PointCloud | np.ndarray,
    gt: PointCloud | np.ndarray,
    align: bool = False,
    aggregate: str = "mean",
) -> ReconMetrics:
    """Accuracy (pred→gt), completion (gt→pred) and their average, from nearest-neighbour distances."""
    if aggregate not in AGGREGATES:
        raise ConfigError(f"aggregate must be one of {AGGREGATES}, got '{aggregate}'")
    P = _points(pred)
    G = _points(gt)
    if P.shape[0] == 0 or G.shape[0] == 0:
        raise EmptyCloud("reconstruction metrics need two non-empty clouds")
    sim = None
    if align:
        sim = icp_align(P, G)
        P = sim.apply(P)
    agg = np.mean if aggregate == "mean" else np.median
    d_pg, _ = cKDTree(G).query(P)
    d_gp, _ = cKDTree(P).query(G)
    acc = float(agg(d_pg))
    comp = float(agg(d_gp))
    logger.debug("recon: %d pred / %d gt points, acc=%.6g comp=%.6g", P.shape[0], G.shape[0], acc, comp)
    return ReconMetrics(acc, comp, 0.5 * (acc + comp), int(P.shape[0]), int(G.shape[0]), aggregate, sim)
