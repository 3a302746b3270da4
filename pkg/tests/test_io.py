from __future__ import annotations

import json

import numpy as np
import pytest

from blockmap.errors import CheckpointMismatch, CorruptCheckpoint, MissingFile, ParseError
from blockmap.geometry import PointCloud
from blockmap.io import (
    MapCheckpoint,
    export_events,
    export_map,
    export_objects,
    export_semantic_map,
    load_checkpoint,
    read_ply,
    save_checkpoint,
    write_ply,
)
from blockmap.io.checkpoint import ARRAYS_NAME
from blockmap.io.exports import class_color, read_events


def test_ply_roundtrip(tmp_path):
    # quarter steps are exact in float32
    pts = np.arange(30, dtype=float).reshape(10, 3) * 0.25
    colors = np.tile(np.array([[10, 20, 30]], dtype=np.uint8), (10, 1))
    ids = np.arange(10, dtype=np.int64)
    write_ply(tmp_path / "a.ply", PointCloud(points=pts, colors=colors, object_ids=ids))
    back = read_ply(tmp_path / "a.ply")
    assert np.array_equal(back.points, pts)
    assert np.array_equal(back.colors, colors)
    assert back.object_ids.tolist() == list(range(10))
    head = (tmp_path / "a.ply").read_bytes().split(b"end_header\n")[0].decode("ascii")
    assert "format binary_little_endian 1.0" in head
    assert "element vertex 10" in head


def test_ply_empty_and_errors(tmp_path):
    write_ply(tmp_path / "e.ply", PointCloud.empty())
    assert len(read_ply(tmp_path / "e.ply")) == 0
    with pytest.raises(MissingFile):
        read_ply(tmp_path / "nope.ply")
    (tmp_path / "junk.ply").write_bytes(b"hello\nworld\n")
    with pytest.raises(ParseError, match="junk.ply"):
        read_ply(tmp_path / "junk.ply")
    write_ply(tmp_path / "cut.ply", PointCloud(points=np.zeros((4, 3))))
    data = (tmp_path / "cut.ply").read_bytes()
    (tmp_path / "cut.ply").write_bytes(data[:-8])
    with pytest.raises(ParseError):
        read_ply(tmp_path / "cut.ply")


def test_ply_reads_ascii_without_ids(tmp_path):
    (tmp_path / "a.ply").write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "1 2 3\n0.5 0 -1\n"
    )
    cloud = read_ply(tmp_path / "a.ply")
    assert cloud.points.tolist() == [[1.0, 2.0, 3.0], [0.5, 0.0, -1.0]]
    assert cloud.colors is None and cloud.object_ids is None


def _state(scene_dict, run_blocks):
    gmap, registry, _ = run_blocks(scene_dict(n_frames=20))
    gmap.drain_trajectory()
    return gmap, registry


def test_checkpoint_roundtrip(tmp_path, scene_dict, run_blocks):
    gmap, registry = _state(scene_dict, run_blocks)
    save_checkpoint(tmp_path / "ck", MapCheckpoint("abc123", 1, gmap, registry, {"trajectory.txt": 20}))
    ck = load_checkpoint(tmp_path / "ck", expected_hash="abc123")
    assert ck.last_block == 1
    assert ck.outputs == {"trajectory.txt": 20}
    g = ck.gmap
    assert np.array_equal(g.cloud.points, gmap.cloud.points)
    assert np.array_equal(g.cloud.frame_indices, gmap.cloud.frame_indices)
    assert g.keyframe_indices == gmap.keyframe_indices
    assert g.keyframe_assignments == gmap.keyframe_assignments
    assert g.e_ref.allclose(gmap.e_ref, atol=1e-12)
    assert (g.n_poses, g.last_frame, g.last_scale) == (gmap.n_poses, gmap.last_frame, gmap.last_scale)
    assert ck.registry.to_dict() == registry.to_dict()
    assert ck.registry.next_id == registry.next_id
    # re-inserting an existing point is still deduplicated after the reload
    if g.cloud.voxel_size > 0:
        assert g.cloud.insert(gmap.cloud.points[:1]) == 0
    assert ck.summary()["objects"] == len(registry)


def test_checkpoint_errors(tmp_path, scene_dict, run_blocks):
    with pytest.raises(MissingFile):
        load_checkpoint(tmp_path / "none")
    gmap, registry = _state(scene_dict, run_blocks)
    save_checkpoint(tmp_path / "ck", MapCheckpoint("abc123", 1, gmap, registry))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck", expected_hash="other")
    with (tmp_path / "ck" / ARRAYS_NAME).open("ab") as f:
        f.write(b"x")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "ck")


def test_map_exports(tmp_path, scene_dict, run_blocks):
    gmap, registry = _state(scene_dict, run_blocks)
    plain = read_ply(export_map(gmap, tmp_path / "map.ply"))
    assert len(plain) == len(gmap.cloud)
    assert set(plain.object_ids.tolist()) == {0}

    sem = read_ply(export_semantic_map(gmap, registry, tmp_path / "sem.ply"))
    n_obj = len(registry.get(1).cloud)
    assert len(sem) == len(gmap.cloud) + n_obj
    chair = sem.object_ids == 1
    assert int(chair.sum()) == n_obj
    assert tuple(sem.colors[chair][0]) == class_color("chair")

    objs = json.loads(export_objects(registry, tmp_path / "objects.json").read_text())
    assert [o["global_id"] for o in objs["objects"]] == [1]
    assert objs["objects"][0]["class"] == "chair"


def test_class_color_is_stable():
    assert class_color("chair") == class_color("chair")
    assert all(64 <= c < 256 for c in class_color("table"))


def test_event_export_sorted(tmp_path):
    src = tmp_path / "events.jsonl"
    rows = [
        {"frame_index": 19, "global_id": 1, "event": "Removed"},
        {"frame_index": 9, "global_id": 2, "event": "Appeared"},
        {"frame_index": 9, "global_id": 1, "event": "Appeared"},
    ]
    src.write_text("".join(json.dumps(r) + "\n" for r in rows) + "\n")
    out = read_events(export_events(src, tmp_path / "sorted" / "events.jsonl"))
    assert [(e["frame_index"], e["global_id"]) for e in out] == [(9, 1), (9, 2), (19, 1)]

    (tmp_path / "bad.jsonl").write_text('{"frame_index": 1}\n{oops\n')
    with pytest.raises(ParseError) as ei:
        read_events(tmp_path / "bad.jsonl")
    assert ei.value.line_no == 2
    with pytest.raises(MissingFile):
        read_events(tmp_path / "missing.jsonl")
