"""TUM trajectory files, timestamp association and absolute trajectory error."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..errors import DataError, DegenerateConfiguration, MissingFile, NoMatches, ParseError
from ..geometry import ExtrinsicPose, from_tum, to_tum


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: List[ExtrinsicPose]

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if ts.shape[0] != len(self.poses):
            raise DataError(f"{ts.shape[0]} timestamps for {len(self.poses)} poses")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise DataError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", list(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def centers(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([E.center for E in self.poses])


def format_tum_line(timestamp: float, pose: ExtrinsicPose) -> str:
    return " ".join([f"{float(timestamp):.6f}"] + [f"{x:.9f}" for x in to_tum(pose)])


def write_tum(path: Path, traj: Trajectory) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for ts, E in zip(traj.timestamps, traj.poses):
            f.write(format_tum_line(ts, E) + "\n")


def read_tum(path: Path) -> Trajectory:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines; ``#`` comments and blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path, "trajectory")
    ts: List[float] = []
    poses: List[ExtrinsicPose] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.replace(",", " ").split()
            if len(parts) != 8:
                raise ParseError(path, line_no, f"expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as e:
                raise ParseError(path, line_no, str(e)) from None
            if not all(np.isfinite(vals)):
                raise ParseError(path, line_no, "non-finite value")
            if ts and vals[0] <= ts[-1]:
                raise ParseError(path, line_no, f"timestamp {vals[0]} does not increase")
            q = np.asarray(vals[4:])
            if not np.isclose(np.linalg.norm(q), 1.0, atol=1e-3):
                raise ParseError(path, line_no, f"quaternion norm {np.linalg.norm(q):.6f} is not 1")
            ts.append(vals[0])
            poses.append(from_tum(vals[1:]))
    return Trajectory(np.asarray(ts), poses)


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> List[Tuple[int, int]]:
    """Greedy nearest-timestamp matching within ``max_dt``; each pose used at most once.

    Returns ``(est index, gt index)`` pairs in est order.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoMatches("cannot associate an empty trajectory")
    cand: List[Tuple[float, int, int]] = []
    g = gt.timestamps
    for i, t in enumerate(est.timestamps):
        lo = int(np.searchsorted(g, t - max_dt, side="left"))
        hi = int(np.searchsorted(g, t + max_dt, side="right"))
        for j in range(lo, hi):
            dt = abs(float(g[j]) - float(t))
            if dt <= max_dt:
                cand.append((dt, i, j))
    cand.sort()
    used_e, used_g = set(), set()
    pairs: List[Tuple[int, int]] = []
    for _, i, j in cand:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no timestamps within {max_dt} s")
    return sorted(pairs)


@dataclass(frozen=True)
class Similarity:
    s: float = 1.0
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, P: np.ndarray) -> np.ndarray:
        return self.s * np.asarray(P, dtype=float).reshape(-1, 3) @ self.R.T + self.t[None, :]

    def to_dict(self) -> dict:
        return {"scale": float(self.s), "R": self.R.tolist(), "t": self.t.tolist()}


def align_umeyama(est: np.ndarray, gt: np.ndarray, with_scale: bool = True, strict: bool = True) -> Similarity:
    """Least-squares ``gt ≈ s R est + t``.

    With ``strict`` the problem must be well posed: at least three pairs,
    neither set coincident, and a cross-covariance of rank >= 2 (not
    collinear). Without it the best-fitting transform is still returned for
    such inputs; its residual is unique even where R is not.
    """
    X = np.asarray(est, dtype=float).reshape(-1, 3)
    Y = np.asarray(gt, dtype=float).reshape(-1, 3)
    if X.shape != Y.shape:
        raise DataError(f"point sets differ in size: {X.shape} vs {Y.shape}")
    n = X.shape[0]
    if n == 0:
        raise NoMatches("alignment needs at least one pair")
    if strict and n < 3:
        raise DegenerateConfiguration(f"alignment needs >= 3 pairs, got {n}")
    if np.array_equal(X, Y) and not strict:
        return Similarity()
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var_x = float(np.mean(np.sum(Xc * Xc, axis=1)))
    var_y = float(np.mean(np.sum(Yc * Yc, axis=1)))
    if var_x == 0.0 or var_y == 0.0:
        if strict:
            raise DegenerateConfiguration("coincident point set")
        return Similarity(1.0, np.eye(3), my - mx)
    sigma = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(sigma)
    if strict and D[1] <= 1e-12 * D[0]:
        raise DegenerateConfiguration("collinear point sets")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.sum(D * np.diag(S)) / var_x) if with_scale else 1.0
    return Similarity(s, R, my - s * R @ mx)


@dataclass(frozen=True, eq=False)
class AteResult:
    rmse: float
    n_matched: int
    alignment: Similarity
    with_scale: bool
    errors: np.ndarray
    est_timestamps: np.ndarray
    aligned_est: np.ndarray
    gt_centers: np.ndarray

    def to_dict(self) -> dict:
        return {
            "ate_rmse": float(self.rmse),
            "n_matched": int(self.n_matched),
            "with_scale": bool(self.with_scale),
            "alignment": self.alignment.to_dict(),
        }


def ate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02, with_scale: bool = False) -> AteResult:
    pairs = associate(est, gt, max_dt)
    ie = np.array([i for i, _ in pairs])
    ig = np.array([j for _, j in pairs])
    P = est.centers[ie]
    G = gt.centers[ig]
    sim = align_umeyama(P, G, with_scale=with_scale, strict=False)
    A = sim.apply(P)
    err = np.linalg.norm(G - A, axis=1)
    return AteResult(
        rmse=float(np.sqrt(np.mean(err * err))),
        n_matched=len(pairs),
        alignment=sim,
        with_scale=with_scale,
        errors=err,
        est_timestamps=est.timestamps[ie],
        aligned_est=A,
        gt_centers=G,
    )


def ate_rmse(est: Trajectory, gt: Trajectory, max_dt: float = 0.02, with_scale: bool = False) -> float:
    return ate(est, gt, max_dt, with_scale).rmse
