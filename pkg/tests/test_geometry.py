from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from blockmap.errors import DataError
from blockmap.geometry import (
    DepthMap,
    ExtrinsicPose,
    Intrinsics,
    compose,
    from_tum,
    identity,
    invert,
    pixel_index,
    pose_from_center,
    project,
    relative,
    rotation_drift,
    to_tum,
    unproject,
)

K = Intrinsics(fx=24.0, fy=24.0, cx=16.0, cy=12.0, width=32, height=24)


def _pose(seed: int) -> ExtrinsicPose:
    rng = np.random.default_rng(seed)
    R = Rotation.from_rotvec(rng.normal(0.0, 0.3, size=3)).as_matrix()
    return ExtrinsicPose(R=R, t=rng.normal(0.0, 1.0, size=3))


def test_unproject_then_project_returns_pixels():
    E = _pose(1)
    rng = np.random.default_rng(2)
    d = DepthMap(rng.uniform(1.0, 5.0, size=(K.height, K.width)))
    pc = unproject(d, K, E, stride=1, frame_index=7)
    assert len(pc) == K.width * K.height
    assert set(pc.frame_indices.tolist()) == {7}

    pr = project(pc, K, E)
    vv, uu = np.meshgrid(np.arange(K.height), np.arange(K.width), indexing="ij")
    assert np.allclose(pr.u, uu.reshape(-1), atol=1e-9)
    assert np.allclose(pr.v, vv.reshape(-1), atol=1e-9)
    assert np.allclose(pr.z, d.values.reshape(-1), atol=1e-9)
    interior = (uu.reshape(-1) > 0) & (vv.reshape(-1) > 0)
    assert pr.in_bounds[interior].all()


def test_unproject_skips_invalid_depth():
    vals = np.full((K.height, K.width), 2.0)
    vals[0, :] = np.nan
    pc = unproject(DepthMap(vals), K, identity(), stride=1)
    assert len(pc) == K.width * (K.height - 1)


def test_project_flags_points_behind_camera():
    pr = project(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]), K, identity())
    assert pr.in_bounds.tolist() == [False, True]
    assert pr.u[1] == pytest.approx(K.cx)


def test_center_is_minus_rt_t():
    E = _pose(3)
    assert np.allclose(E.center, -E.R.T @ E.t)
    assert pose_from_center(E.R, E.center).allclose(E, atol=1e-12)


def test_compose_invert_relative():
    A, B = _pose(4), _pose(5)
    assert compose(A, invert(A)).allclose(identity(), atol=1e-12)
    assert np.allclose(
        compose(A, B).matrix(),
        (np.vstack([A.matrix(), [0, 0, 0, 1]]) @ np.vstack([B.matrix(), [0, 0, 0, 1]]))[:3],
        atol=1e-12,
    )
    # relative(a, b) maps camera-b coordinates into camera-a coordinates
    X = np.array([0.3, -0.2, 2.0])
    xb = B.R @ X + B.t
    rel = relative(A, B)
    assert np.allclose(rel.R @ xb + rel.t, A.R @ X + A.t, atol=1e-12)


def test_long_compose_chain_stays_on_so3():
    E = identity()
    step = _pose(6)
    for _ in range(500):
        E = compose(E, step)
    assert rotation_drift(E.R) < 1e-9


def test_tum_roundtrip_and_sign():
    for seed in range(5):
        E = _pose(10 + seed)
        vals = to_tum(E)
        assert vals[6] >= 0.0
        assert np.allclose(vals[:3], E.center)
        assert from_tum(vals).allclose(E, atol=1e-9)


def test_pose_rejects_non_orthonormal_rotation():
    with pytest.raises(DataError):
        ExtrinsicPose(R=np.diag([1.0, 1.0, 1.1]), t=np.zeros(3))
    with pytest.raises(DataError):
        ExtrinsicPose(R=np.eye(3), t=[np.nan, 0.0, 0.0])
    with pytest.raises(DataError):
        ExtrinsicPose.from_row12([1.0] * 11)


def test_intrinsics_and_depth_validation():
    with pytest.raises(DataError):
        Intrinsics(fx=0.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)
    with pytest.raises(DataError):
        Intrinsics(fx=1.0, fy=1.0, cx=5.0, cy=1.0, width=4, height=4)
    with pytest.raises(DataError):
        DepthMap(np.array([[1.0, -1.0]]))
    with pytest.raises(DataError):
        DepthMap(np.array([[1.0, 2.0]])).check_matches(K)
    assert Intrinsics.from_dict(K.to_dict()) == K


def test_pixel_index_rounds_to_nearest_centre():
    ui, vi, inside = pixel_index(np.array([10.4, 10.6, -0.6, 31.6, np.nan]), np.array([0.0, 23.4, 5.0, 5.0, 5.0]), 32, 24)
    assert ui.tolist() == [10, 11, -1, 32, -1]
    assert vi.tolist() == [0, 23, 5, 5, 5]
    assert inside.tolist() == [True, True, False, False, False]

    pr = project(np.array([[-0.45, 0.0, 2.0], [-0.45, 0.0, -2.0]]), K, identity())
    u, v, ok = pr.pixels(K.width, K.height)
    assert (u[0], v[0]) == (11, 12)
    assert ok.tolist() == [True, False]
