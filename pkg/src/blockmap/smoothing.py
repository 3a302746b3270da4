"""Curvature-corrected moving average (CCMA) of camera positions.

A kernel-weighted moving average pulls samples on a curved path towards the
centre of curvature. For a circle of radius r sampled at angular spacing dθ,
the averaged point sits at radius ``r * f`` with ``f = Σ w_i cos(i dθ)``. The
correction estimates the local circle from the averaged points (Menger
curvature) and pushes each averaged point back out along the outward normal
by ``ρ (1/f − 1)``, where ρ is the radius measured on the averaged curve.

Windows are symmetric and shrink near the ends, so the first and last samples
are left untouched.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from .errors import ConfigError, TooShort
from .geometry import ExtrinsicPose, pose_from_center

KERNELS = ("hann", "uniform")
_KAPPA_MIN = 1e-9


@dataclass(frozen=True)
class SmootherConfig:
    k1: int = 3
    k2: int = 3
    kernel: str = "hann"
    enabled: bool = True

    def validate(self) -> None:
        if int(self.k1) < 1 or int(self.k2) < 1:
            raise ConfigError(f"smoother.k1 and smoother.k2 must be >= 1 (got {self.k1}, {self.k2})")
        if self.kernel not in KERNELS:
            raise ConfigError(f"smoother.kernel must be one of {KERNELS}, got '{self.kernel}'")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def kernel_weights(half_width: int, kernel: str = "hann") -> np.ndarray:
    """Normalised, strictly positive weights for a window of ``2*half_width + 1``."""
    h = int(half_width)
    if h <= 0:
        return np.ones(1)
    if kernel == "uniform":
        w = np.ones(2 * h + 1)
    elif kernel == "hann":
        # drop the two zero end taps of a (2h+3)-point Hann window
        w = np.hanning(2 * h + 3)[1:-1]
    else:
        raise ConfigError(f"unknown kernel '{kernel}'")
    return w / w.sum()


def menger_curvature(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    ab = b - a
    bc = c - b
    ac = c - a
    denom = np.linalg.norm(ab) * np.linalg.norm(bc) * np.linalg.norm(ac)
    if denom == 0.0:
        return 0.0
    return float(2.0 * np.linalg.norm(np.cross(ab, ac)) / denom)


def circumcenter(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    u = a - c
    v = b - c
    w = np.cross(u, v)
    ww = float(w @ w)
    return c + np.cross((u @ u) * v - (v @ v) * u, w) / (2.0 * ww)


def moving_average(P: np.ndarray, k: int, kernel: str) -> tuple[np.ndarray, np.ndarray]:
    """Shrinking-window kernel average; returns (averaged points, half-width used per point)."""
    N = P.shape[0]
    out = np.empty_like(P)
    used = np.zeros(N, dtype=np.int64)
    for n in range(N):
        h = min(int(k), n, N - 1 - n)
        out[n] = kernel_weights(h, kernel) @ P[n - h:n + h + 1]
        used[n] = h
    return out, used


def smooth_positions(positions: Sequence[Sequence[float]] | np.ndarray, cfg: SmootherConfig) -> np.ndarray:
    P = np.asarray(positions, dtype=float).reshape(-1, 3)
    N = P.shape[0]
    if N < 3:
        raise TooShort(f"CCMA needs at least 3 positions, got {N}")
    ma, h2 = moving_average(P, cfg.k2, cfg.kernel)
    out = ma.copy()
    for n in range(1, N - 1):
        h1 = min(int(cfg.k1), n, N - 1 - n)
        if h1 == 0 or h2[n] == 0:
            continue
        a, b, c = ma[n - h1], ma[n], ma[n + h1]
        kappa = menger_curvature(a, b, c)
        if kappa < _KAPPA_MIN:
            continue
        rho = 1.0 / kappa
        chord = 0.5 * (np.linalg.norm(ma[n + 1] - ma[n]) + np.linalg.norm(ma[n] - ma[n - 1]))
        dtheta = 2.0 * np.arcsin(min(1.0, 0.5 * chord * kappa))
        offsets = np.arange(-h2[n], h2[n] + 1)
        f = float(kernel_weights(int(h2[n]), cfg.kernel) @ np.cos(offsets * dtheta))
        if f <= 1e-6:
            continue
        normal = b - circumcenter(a, b, c)
        nn = float(np.linalg.norm(normal))
        if nn == 0.0 or not np.isfinite(nn):
            continue
        out[n] = b + normal / nn * rho * (1.0 / f - 1.0)
    return out


def smooth_block_poses(poses: Sequence[ExtrinsicPose], cfg: SmootherConfig) -> List[ExtrinsicPose]:
    """Smooth camera centres of one block; rotations pass through unchanged."""
    centers = np.array([E.center for E in poses])
    smoothed = smooth_positions(centers, cfg)
    return [pose_from_center(E.R, c) for E, c in zip(poses, smoothed)]
