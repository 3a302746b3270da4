"""Trajectory (ATE) and reconstruction (accuracy / completion / Chamfer) evaluation."""

from .recon import ReconMetrics, recon_metrics
from .trajectory import (
    AteResult,
    Similarity,
    Trajectory,
    align_umeyama,
    associate,
    ate,
    ate_rmse,
    read_tum,
    write_tum,
)

__all__ = [
    "AteResult",
    "ReconMetrics",
    "Similarity",
    "Trajectory",
    "align_umeyama",
    "associate",
    "ate",
    "ate_rmse",
    "read_tum",
    "recon_metrics",
    "write_tum",
]
