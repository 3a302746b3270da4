from __future__ import annotations

import numpy as np
import pytest

from blockmap.errors import EmptyCloud, EmptyObject, InvariantViolation
from blockmap.semantics import (
    EMPTY,
    UNTRACKED,
    ObjectRegistry,
    bbox_iou,
    chamfer,
    erode_mask,
    filter_tracks,
    mutual_assign,
    reid_bbox,
    reid_chamfer,
    sample_grid,
    support_matrix,
    update_tracklets,
)
from blockmap.stream import BACKGROUND, InstanceMask, Tracks


def _mask(label, rows, cols, shape=(9, 9), conf=1.0):
    m = np.zeros(shape, dtype=bool)
    m[rows, cols] = True
    return InstanceMask(label, m, conf)


def test_erode_mask():
    m = _mask("chair", slice(2, 7), slice(2, 7))
    e = erode_mask(m, 1)
    assert e.area == 9
    assert e.mask[3:6, 3:6].all()
    assert erode_mask(m, 0) is m
    assert erode_mask(m, 3) is None


def test_sample_grid_labels():
    a = _mask("chair", slice(0, 4), slice(0, 4))
    b = _mask("table", slice(4, 9), slice(4, 9))
    us, vs, labels = sample_grid([a, b], 4, 9, 9)
    assert us.tolist() == [0, 4, 8, 0, 4, 8, 0, 4, 8]
    assert vs.tolist() == [0, 0, 0, 4, 4, 4, 8, 8, 8]
    assert labels.tolist() == [0, BACKGROUND, BACKGROUND, BACKGROUND, 1, 1, BACKGROUND, 1, 1]


def test_overlapping_masks_go_to_higher_confidence():
    lo = _mask("chair", slice(0, 9), slice(0, 9), conf=0.4)
    hi = _mask("chair", slice(0, 2), slice(0, 2), conf=0.9)
    _, _, labels = sample_grid([lo, hi], 8, 9, 9)
    assert labels.tolist() == [1, 0, 0, 0]


def test_filter_tracks_is_strict():
    tr = Tracks(uv=np.zeros((3, 1, 2)), conf=np.array([[0.1], [0.5], [0.0]]))
    assert filter_tracks(tr, 0.1)[:, 0].tolist() == [False, True, False]


def test_support_and_mutual_assignment():
    chair = _mask("chair", slice(0, 4), slice(0, 4))
    table = _mask("table", slice(5, 9), slice(5, 9))
    # tracklet 3 (chair) has two points in the chair mask, tracklet 7 (table) three in the table mask
    ids = np.array([3, 3, 7, 7, 7, 7])
    us = np.array([1, 2, 6, 7, 8, 0])
    vs = np.array([1, 2, 6, 7, 8, 8])
    S = support_matrix(ids, us, vs, [chair, table], [3, 7])
    assert S.tolist() == [[2, 0], [0, 3]]
    a = mutual_assign(S, ["chair", "table"], ["chair", "table"])
    assert a.matches == [(0, 0), (1, 1)]
    assert a.unmatched_rows == [] and a.unmatched_cols == []


def test_mutual_assign_gates_on_class():
    a = mutual_assign(np.array([[5]]), ["chair"], ["table"])
    assert a.matches == []
    assert a.unmatched_rows == [0]
    assert a.unmatched_cols == [0]


def test_mutual_assign_ties_go_to_older_tracklet():
    a = mutual_assign(np.array([[4], [4]]), ["chair", "chair"], ["chair"])
    assert a.matches == [(0, 0)]
    assert a.unmatched_rows == [1]


def test_mutual_assign_one_mask_per_tracklet():
    # both masks nominate the tracklet; it keeps the one with more support
    a = mutual_assign(np.array([[2, 6]]), ["chair"], ["chair", "chair"])
    assert a.matches == [(0, 1)]
    assert a.unmatched_cols == [0]


def test_update_tracklets_new_and_untracked():
    next_id = iter(range(1, 100))
    tracklets = {}
    upd = update_tracklets(tracklets, [], [0, 1], ["chair", "table"], 0, lambda cls: next(next_id))
    assert upd.new_ids == [1, 2]
    assert upd.assigned == {0: 1, 1: 2}
    assert tracklets[1].records == [0] and tracklets[1].is_new

    upd = update_tracklets(tracklets, [(2, 0, 5)], [1], ["table", "chair"], 1, lambda cls: next(next_id))
    assert upd.new_ids == []
    assert upd.n_untracked == 1
    (lost,) = upd.untracked
    assert (lost.global_id, lost.class_label, lost.start, lost.records) == (UNTRACKED, "chair", 1, [1])
    assert UNTRACKED not in tracklets
    assert tracklets[1].records == [0, EMPTY]
    assert tracklets[2].records == [1, 0]
    assert tracklets[2].n_detections == 2


def test_bbox_iou():
    lo, hi = np.zeros(3), np.ones(3)
    shift = np.array([0.5, 0.0, 0.0])
    assert bbox_iou(lo, hi, lo + shift, hi + shift) == pytest.approx(1.0 / 3.0)
    assert bbox_iou(lo, hi, lo, hi) == pytest.approx(1.0)
    assert bbox_iou(lo, hi, lo + 2.0, hi + 2.0) == 0.0


def test_reid_bbox_greedy_and_class_gated():
    lo, hi = np.zeros(3), np.ones(3)
    new = [(10, "chair", lo, hi), (11, "table", lo, hi)]
    old = [(1, "chair", lo + 0.1, hi + 0.1), (2, "chair", lo, hi)]
    out = reid_bbox(new, old, 0.25)
    assert [(a, b) for a, b, _ in out] == [(10, 2)]
    assert out[0][2] == pytest.approx(1.0)


def test_chamfer():
    assert chamfer(np.zeros((1, 3)), np.array([[0.1, 0.0, 0.0]])) == pytest.approx(0.1)
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    b = np.array([[0.0, 0.0, 0.0]])
    assert chamfer(a, b) == pytest.approx(0.5 * (0.5 + 0.0))
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), b)


def test_reid_chamfer_threshold_is_strict():
    cloud = np.zeros((1, 3))
    hist = [(4, "chair", np.array([[0.3, 0.0, 0.0]])), (5, "chair", np.array([[0.2, 0.0, 0.0]])), (6, "table", cloud)]
    assert reid_chamfer(cloud, "chair", hist, 0.25) == (5, pytest.approx(0.2))
    assert reid_chamfer(cloud, "chair", hist, 0.2) is None
    assert reid_chamfer(cloud, "sofa", hist, 1.0) is None


def test_registry_ids_and_merge():
    reg = ObjectRegistry(voxel_size=0.0)
    a = reg.create("chair", 0, 0)
    b = reg.create("chair", 2, 20)
    c = reg.create("table", 2, 20)
    assert [a.global_id, b.global_id, c.global_id] == [1, 2, 3]
    with pytest.raises(EmptyObject):
        a.bbox()
    a.add_observation(0, np.array([[0.0, 0.0, 2.0]]), 10)
    b.add_observation(20, np.array([[0.1, 0.0, 2.0]]), 10)
    kept = reg.merge(2, 1, 10)
    assert kept is a and 2 not in reg
    assert reg.aliases == {2: 1}
    assert a.last_seen == 20 and len(a.cloud) == 2
    assert a.median_frames == [0, 20]
    with pytest.raises(InvariantViolation):
        reg.merge(3, 1, 10)
    with pytest.raises(InvariantViolation):
        reg.get(2)
    assert reg.create("sofa", 3, 30).global_id == 4


def test_median_points_are_bounded():
    reg = ObjectRegistry()
    o = reg.create("chair", 0, 0)
    for f in range(5):
        o.add_observation(f, np.array([[float(f), 0.0, 1.0]]), 3)
    assert o.median_frames == [2, 3, 4]


# --- block-level identity scenarios on synthetic scenes ---


def _ids(registry):
    return [o.global_id for o in registry]


def test_static_object_keeps_one_id(scene_dict, run_blocks):
    _, registry, steps = run_blocks(scene_dict(n_frames=30))
    assert _ids(registry) == [1]
    assert registry.get(1).class_label == "chair"
    assert steps[0][1].new_ids == [1]
    assert [t.new_ids for _, t, _ in steps[1:]] == [[], []]
    assert all(t.detected == [1] for _, t, _ in steps)
    assert registry.n_untracked == 0
    # the chair front face sits at z=2 once the 2x prediction is rescaled
    lo, hi = registry.get(1).bbox()
    assert lo[2] == pytest.approx(2.0, abs=0.05)
    assert hi[2] <= 2.6 + 1e-6


def test_object_reentering_same_place_is_reidentified(scene_dict, run_blocks, wall, chair):
    a = dict(chair, id="chair_a", remove_block=0)
    b = dict(chair, id="chair_b", insert_block=2)
    _, registry, steps = run_blocks(scene_dict(n_frames=30, objects=[wall, a, b]))
    assert _ids(registry) == [1]
    tracking = steps[2][1]
    assert tracking.merges == [(2, 1, "bbox")]
    assert tracking.new_ids == []
    assert [e.event for e in steps[2][2]] == ["Redetected"]


def test_shifted_reentry_matches_by_chamfer(scene_dict, run_blocks, make_config, wall, chair):
    a = dict(chair, id="chair_a", remove_block=0)
    b = dict(chair, id="chair_b", insert_block=2, min=[-0.2, -0.2, 2.0], max=[0.4, 0.6, 2.6])
    cfg = make_config(tracker={"bbox_iou_thresh": 0.99})
    _, registry, steps = run_blocks(scene_dict(n_frames=30, objects=[wall, a, b]), cfg)
    assert _ids(registry) == [1]
    assert steps[2][1].merges == [(2, 1, "chamfer")]


def test_object_at_a_different_place_gets_a_new_id(scene_dict, run_blocks, wall):
    a = {"id": "chair_a", "kind": "box", "label": "chair", "min": [-1.3, -0.2, 3.0], "max": [-0.7, 0.6, 3.5],
         "remove_block": 0}
    b = {"id": "chair_b", "kind": "box", "label": "chair", "min": [0.7, -0.2, 3.0], "max": [1.3, 0.6, 3.5],
         "insert_block": 2}
    _, registry, steps = run_blocks(scene_dict(n_frames=30, objects=[wall, a, b]))
    assert _ids(registry) == [1, 2]
    assert steps[2][1].new_ids == [2]
    assert steps[2][1].merges == []
    assert ("Appeared", 2) in [(e.event, e.global_id) for e in steps[2][2]]


def test_two_classes_get_two_ids(scene_dict, run_blocks, wall):
    a = {"id": "chair", "kind": "box", "label": "chair", "min": [-1.3, -0.2, 3.0], "max": [-0.7, 0.6, 3.5]}
    b = {"id": "table", "kind": "box", "label": "table", "min": [0.7, -0.2, 3.0], "max": [1.3, 0.6, 3.5]}
    _, registry, steps = run_blocks(scene_dict(n_frames=20, objects=[wall, a, b]))
    assert sorted(o.class_label for o in registry) == ["chair", "table"]
    assert steps[1][1].new_ids == []


def test_two_same_class_objects_keep_distinct_ids(scene_dict, run_blocks, wall):
    a = {"id": "chair_a", "kind": "box", "label": "chair", "min": [-1.3, -0.2, 3.0], "max": [-0.7, 0.6, 3.5]}
    b = {"id": "chair_b", "kind": "box", "label": "chair", "min": [0.7, -0.2, 3.0], "max": [1.3, 0.6, 3.5]}
    _, registry, steps = run_blocks(scene_dict(n_frames=30, objects=[wall, a, b]))
    assert _ids(registry) == [1, 2]
    assert all(o.class_label == "chair" for o in registry)
    assert sorted(steps[0][1].new_ids) == [1, 2]
    assert all(t.detected == [1, 2] and t.new_ids == [] and t.merges == [] for _, t, _ in steps[1:])
    centers = sorted(float((lo[0] + hi[0]) / 2) for lo, hi in (o.bbox() for o in registry))
    assert centers[0] < -0.5 and centers[1] > 0.5


def test_mid_block_detections_are_stored_untracked(scene_dict, run_blocks, wall, chair):
    side_wall = {"id": "side", "kind": "plane", "point": [4.0, 0.0, 0.0], "normal": [1.0, 0.0, 0.0]}
    # looking at the side wall until frame 14, then at the chair
    cam = {
        "keyframes": [
            {"frame": 0, "position": [0.0, 0.0, 0.0], "yaw_deg": 90.0},
            {"frame": 14, "position": [0.0, 0.0, 0.0], "yaw_deg": 90.0},
            {"frame": 15, "position": [0.0, 0.0, 0.0], "yaw_deg": 0.0},
            {"frame": 29, "position": [0.0, 0.0, 0.0], "yaw_deg": 0.0},
        ]
    }
    _, registry, steps = run_blocks(scene_dict(n_frames=30, objects=[wall, side_wall, chair], camera=cam))
    assert steps[0][1].n_untracked == 0
    t1 = steps[1][1]
    assert t1.tracklets == {} and t1.new_ids == []
    assert [t.start for t in t1.untracked] == [5, 6, 7, 8, 9]
    assert all(t.global_id == UNTRACKED and t.class_label == "chair" and t.n_detections == 1 for t in t1.untracked)
    assert t1.to_report()["untracked"] == 5
    # the next block starts on the chair and gives it a real id
    assert steps[2][1].new_ids == [1]
    assert _ids(registry) == [1]
    assert registry.n_untracked == 5
