from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from blockmap.errors import ConfigError, TooShort
from blockmap.geometry import ExtrinsicPose, pose_from_center
from blockmap.smoothing import (
    SmootherConfig,
    kernel_weights,
    menger_curvature,
    moving_average,
    smooth_block_poses,
    smooth_positions,
)


def _circle(n: int = 64) -> np.ndarray:
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.stack([np.cos(th), np.sin(th), np.zeros(n)], axis=1)


def test_kernel_weights_normalised_and_positive():
    for kernel in ("hann", "uniform"):
        for h in range(0, 5):
            w = kernel_weights(h, kernel)
            assert w.shape == (2 * h + 1,)
            assert np.all(w > 0)
            assert w.sum() == pytest.approx(1.0)
            assert np.allclose(w, w[::-1])
    with pytest.raises(ConfigError):
        kernel_weights(2, "gauss")


def test_circle_correction_beats_plain_average():
    P = _circle()
    cfg = SmootherConfig(k1=3, k2=3, kernel="hann")
    ma, _ = moving_average(P, cfg.k2, cfg.kernel)
    ccma = smooth_positions(P, cfg)
    # interior points whose curvature windows see full averaging windows
    sl = slice(6, 58)
    err_ma = np.abs(np.linalg.norm(ma[sl], axis=1) - 1.0).max()
    err_ccma = np.abs(np.linalg.norm(ccma[sl], axis=1) - 1.0).max()
    assert err_ma > 5e-3
    assert err_ccma < 1e-6
    assert err_ccma < err_ma


def test_collinear_equispaced_unchanged():
    P = np.outer(np.arange(12, dtype=float), [0.3, -0.1, 0.2]) + [1.0, 2.0, 3.0]
    out = smooth_positions(P, SmootherConfig())
    assert np.allclose(out, P, atol=1e-9)


def test_identical_points_unchanged_and_endpoints_fixed():
    P = np.tile([1.0, 2.0, 3.0], (5, 1))
    assert np.allclose(smooth_positions(P, SmootherConfig()), P)
    Q = _circle(16)
    out = smooth_positions(Q, SmootherConfig())
    assert np.array_equal(out[0], Q[0])
    assert np.array_equal(out[-1], Q[-1])


def test_too_short():
    with pytest.raises(TooShort):
        smooth_positions(np.zeros((2, 3)), SmootherConfig())


def test_uniform_kernel_on_zero_curvature_is_arithmetic_average():
    rng = np.random.default_rng(0)
    P = np.zeros((9, 3))
    P[:, 0] = np.sort(rng.uniform(0.0, 5.0, size=9))
    out = smooth_positions(P, SmootherConfig(k1=1, k2=1, kernel="uniform"))
    assert np.allclose(out[1:-1, 0], (P[:-2, 0] + P[1:-1, 0] + P[2:, 0]) / 3.0)


def test_jittered_line_moves_closer_to_the_line():
    rng = np.random.default_rng(1)
    n = 40
    truth = np.stack([np.linspace(0.0, 4.0, n), np.zeros(n), np.zeros(n)], axis=1)
    noisy = truth + rng.normal(0.0, 0.01, size=truth.shape)
    out = smooth_positions(noisy, SmootherConfig())

    def off_line(P: np.ndarray) -> float:
        return float(np.mean(np.linalg.norm(P[:, 1:], axis=1)))

    assert off_line(out) < off_line(noisy)


def test_rigid_invariance():
    P = _circle(20) * 2.0 + np.linspace(0, 1, 20)[:, None] * [0.0, 0.0, 1.0]
    R = Rotation.from_euler("xyz", [0.3, -0.5, 1.1]).as_matrix()
    t = np.array([1.0, -2.0, 0.5])
    cfg = SmootherConfig()
    a = smooth_positions(P @ R.T + t, cfg)
    b = smooth_positions(P, cfg) @ R.T + t
    assert np.allclose(a, b, atol=1e-9)


def test_block_poses_keep_rotations():
    R = Rotation.from_euler("y", 20, degrees=True).as_matrix()
    poses = [pose_from_center(R, c) for c in _circle(10)]
    out = smooth_block_poses(poses, SmootherConfig())
    assert all(isinstance(E, ExtrinsicPose) for E in out)
    assert all(np.array_equal(a.R, b.R) for a, b in zip(poses, out))


def test_menger_curvature_of_unit_circle():
    a, b, c = np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([-1.0, 0, 0])
    assert menger_curvature(a, b, c) == pytest.approx(1.0)
    assert menger_curvature(a, a, c) == 0.0


def test_config_validation():
    with pytest.raises(ConfigError):
        SmootherConfig(k1=0).validate()
    with pytest.raises(ConfigError):
        SmootherConfig(kernel="box").validate()
