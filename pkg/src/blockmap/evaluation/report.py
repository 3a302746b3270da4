from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

try:
    import matplotlib
    matplotlib.use('Agg')  # headless
    import matplotlib.pyplot as plt
    _HAS_MPL = True
except Exception:
    _HAS_MPL = False

from ..util import write_json
from .recon import ReconMetrics
from .trajectory import AteResult

logger = logging.getLogger(__name__)

ATE_CSV = "ate_errors.csv"
ATE_PLOT = "trajectory_xy.png"
METRICS_JSON = "metrics.json"


def ate_table(res: AteResult) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "timestamp": res.est_timestamps,
            "error": res.errors,
            "est_x": res.aligned_est[:, 0],
            "est_y": res.aligned_est[:, 1],
            "est_z": res.aligned_est[:, 2],
            "gt_x": res.gt_centers[:, 0],
            "gt_y": res.gt_centers[:, 1],
            "gt_z": res.gt_centers[:, 2],
        }
    )


def plot_trajectory_xy(res: AteResult, out_png: Path) -> bool:
    """Top-down plot of aligned estimate vs ground truth; False when matplotlib is unavailable or fails."""
    if not _HAS_MPL:
        return False
    try:
        fig = plt.figure(figsize=(6, 6))
        ax = fig.add_subplot(1, 1, 1)
        ax.plot(res.gt_centers[:, 0], res.gt_centers[:, 2], label="ground truth")
        ax.plot(res.aligned_est[:, 0], res.aligned_est[:, 2], label="estimate", linestyle="--")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("z [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        ax.set_title(f"ATE RMSE {res.rmse:.4f} m")
        fig.savefig(out_png, dpi=120, bbox_inches="tight")
        plt.close(fig)
        return True
    except Exception as e:  # plotting is best effort
        logger.warning("trajectory plot failed: %s", e)
        return False


def write_ate_report(rigid: AteResult, sim: AteResult, out_dir: Path, plot: bool = True) -> Dict[str, Any]:
    out_dir.mkdir(parents=True, exist_ok=True)
    ate_table(rigid).to_csv(out_dir / ATE_CSV, index=False)
    artifacts: List[str] = [ATE_CSV]
    if plot and plot_trajectory_xy(rigid, out_dir / ATE_PLOT):
        artifacts.append(ATE_PLOT)
    report = {
        "mode": "ate",
        "ate_rmse": float(rigid.rmse),
        "ate_rmse_sim3": float(sim.rmse),
        "n_matched": int(rigid.n_matched),
        "alignment": {"rigid": rigid.alignment.to_dict(), "sim3": sim.alignment.to_dict()},
        "artifacts": artifacts,
    }
    write_json(out_dir / METRICS_JSON, report)
    return report


def write_recon_report(m: ReconMetrics, out_dir: Path) -> Dict[str, Any]:
    report = {"mode": "recon", **m.to_dict()}
    write_json(out_dir / METRICS_JSON, report)
    return report
