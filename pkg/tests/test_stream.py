from __future__ import annotations

import json

import numpy as np
import pytest
from scipy import ndimage

from blockmap.alignment import form_block_inputs
from blockmap.errors import DataError, InvalidSpec, MalformedManifest, MissingFile, NonMonotoneIndex, PredictionMissing
from blockmap.geometry import DepthMap
from blockmap.stream import (
    FileProvider,
    InstanceMask,
    SceneSpec,
    SyntheticProvider,
    SyntheticScene,
    decode_rle,
    encode_rle,
    fallback_feature_score,
    open_stream,
    provider_infer,
    synth_generate,
    write_stream,
)
from blockmap.stream.depth_io import read_depth, write_depth

INTR = {"fx": 24.0, "fy": 24.0, "cx": 16.0, "cy": 12.0, "width": 32, "height": 24}


def _line(fi, **extra):
    obj = {"frame_index": fi, "timestamp": fi * 0.1, "intrinsics": INTR}
    obj.update(extra)
    return json.dumps(obj)


def test_rle_known_counts():
    m = np.array([[1, 1, 0], [0, 1, 1]], dtype=bool)
    assert encode_rle(m) == [0, 2, 2, 2]
    assert np.array_equal(decode_rle([0, 2, 2, 2], 3, 2), m)
    z = np.zeros((2, 2), dtype=bool)
    assert encode_rle(z) == [4]


def test_rle_rejects_wrong_total():
    with pytest.raises(DataError):
        decode_rle([1, 2], 3, 2)


def test_depth_file_keeps_nan(tmp_path):
    vals = np.full((4, 5), 2.5)
    vals[1, 2] = np.nan
    write_depth(tmp_path / "d.dpth", DepthMap(vals))
    back = read_depth(tmp_path / "d.dpth")
    assert back.values.shape == (4, 5)
    assert np.isnan(back.values[1, 2])
    assert np.nansum(back.values) == pytest.approx(2.5 * 19)


def test_depth_file_errors(tmp_path):
    with pytest.raises(MissingFile):
        read_depth(tmp_path / "none.dpth")
    (tmp_path / "bad.dpth").write_bytes(b"XXXX" + b"\0" * 12)
    with pytest.raises(DataError):
        read_depth(tmp_path / "bad.dpth")


def test_manifest_sorted_by_frame_index(tmp_path):
    (tmp_path / "manifest.jsonl").write_text("\n".join([_line(2), _line(0), "", _line(1)]) + "\n")
    stream = open_stream(tmp_path)
    assert len(stream) == 3
    assert stream.frame_indices == [0, 1, 2]
    assert [f.frame_index for f in stream] == [0, 1, 2]


def test_manifest_repeated_index(tmp_path):
    (tmp_path / "manifest.jsonl").write_text("\n".join([_line(0), _line(1), _line(1)]) + "\n")
    with pytest.raises(NonMonotoneIndex):
        open_stream(tmp_path)


def test_manifest_malformed_line_names_line(tmp_path):
    (tmp_path / "manifest.jsonl").write_text(_line(0) + "\n{not json\n")
    with pytest.raises(MalformedManifest, match=":2:"):
        open_stream(tmp_path)
    (tmp_path / "manifest.jsonl").write_text(json.dumps({"frame_index": 0, "timestamp": 0.0}) + "\n")
    with pytest.raises(MalformedManifest, match="intrinsics"):
        open_stream(tmp_path)


def test_manifest_missing(tmp_path):
    with pytest.raises(MissingFile):
        open_stream(tmp_path)


def test_manifest_missing_depth_file(tmp_path):
    (tmp_path / "manifest.jsonl").write_text(_line(0, depth_sensor="depth/x.dpth") + "\n")
    stream = open_stream(tmp_path)
    with pytest.raises(MissingFile):
        list(stream)


def test_write_stream_roundtrip(tmp_path):
    spec = SceneSpec.from_dict(
        {
            "intrinsics": INTR,
            "n_frames": 3,
            "objects": [
                {"id": "wall", "kind": "plane", "point": [0, 0, 4], "normal": [0, 0, 1]},
                {"id": "box", "kind": "box", "label": "box", "min": [-0.5, -0.5, 2.0], "max": [0.5, 0.5, 2.5]},
            ],
        }
    )
    frames = list(SyntheticScene(spec).iter_frames())
    write_stream(frames, tmp_path)
    back = list(open_stream(tmp_path))
    assert [f.frame_index for f in back] == [0, 1, 2]
    for a, b in zip(frames, back):
        assert np.array_equal(a.sensor_depth.values, b.sensor_depth.values)
        assert [m.class_label for m in a.masks] == [m.class_label for m in b.masks]
        assert np.array_equal(a.masks[0].mask, b.masks[0].mask)
        assert b.pose.allclose(a.pose, atol=1e-12)


def test_instance_mask_needs_a_pixel():
    with pytest.raises(DataError):
        InstanceMask("chair", np.zeros((2, 2), dtype=bool))


def test_fallback_feature_score():
    flat = np.full((16, 16), 3.0)
    assert fallback_feature_score(flat) == pytest.approx(0.0, abs=1e-12)
    checker = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
    blurred = ndimage.uniform_filter(checker, size=3)
    assert fallback_feature_score(checker) > fallback_feature_score(blurred)
    assert fallback_feature_score(checker + 7.0) == pytest.approx(fallback_feature_score(checker))
    with pytest.raises(DataError):
        fallback_feature_score(np.zeros(5))


def test_static_camera_over_plane(scene_dict, small_intrinsics, wall):
    spec = scene_dict(n_frames=4, intrinsics=small_intrinsics, objects=[wall], pred_scale=1.0)
    scene = SyntheticScene(SceneSpec.from_dict(spec))
    d0 = scene.frame(0).sensor_depth.values
    # the wall is a fronto-parallel plane, so camera depth is 4 everywhere
    assert np.allclose(d0, 4.0)
    out = SyntheticProvider(scene).infer([scene.frame(f) for f in range(4)], np.array([[16.0, 12.0]]))
    for E in out.extrinsics:
        assert np.allclose(E.R, np.eye(3)) and np.allclose(E.t, 0.0)


def test_moving_camera_extrinsics(scene_dict, small_intrinsics, wall):
    cam = {"keyframes": [{"frame": 0, "position": [0.0, 0.0, 0.0]}, {"frame": 10, "position": [1.0, 0.0, 0.0]}]}
    spec = scene_dict(n_frames=5, intrinsics=small_intrinsics, objects=[wall], camera=cam, pred_scale=1.0)
    scene = SyntheticScene(SceneSpec.from_dict(spec))
    rel = scene.relative_extrinsics([0, 1, 2, 3])
    for j, E in enumerate(rel):
        assert np.allclose(E.t, [-0.1 * j, 0.0, 0.0], atol=1e-12)


def test_predicted_depth_is_scaled_sensor_depth(scene_dict):
    scene = SyntheticScene(SceneSpec.from_dict(scene_dict(n_frames=2, pred_scale=2.0)))
    s = scene.sensor_depth(1).values
    p = scene.predicted_depth(1).values
    ok = np.isfinite(s)
    assert np.array_equal(np.isfinite(p), ok)
    assert np.array_equal(p[ok], 2.0 * s[ok])


def test_tracks_follow_projection(scene_dict):
    cam = {"keyframes": [{"frame": 0, "position": [0.0, 0.0, 0.0]}, {"frame": 10, "position": [0.5, 0.0, 0.0]}]}
    scene = SyntheticScene(SceneSpec.from_dict(scene_dict(n_frames=5, camera=cam)))
    q = np.array([[10.0, 10.0], [40.0, 30.0]])
    tr = scene.tracks([0, 2, 4], q)
    assert tr.uv.shape == (2, 3, 2)
    assert np.array_equal(tr.uv[:, 0, :], q)
    # moving right makes every static point drift left in the image
    assert np.all(tr.uv[:, 2, 0] < tr.uv[:, 0, 0])
    assert np.all(tr.conf == 1.0)


def test_synth_is_deterministic(tmp_path, scene_dict):
    spec = scene_dict(n_frames=4, noise={"pred_sigma": 0.01, "sensor_sigma": 0.01})
    synth_generate(spec, seed=3, out_dir=tmp_path / "a")
    synth_generate(spec, seed=3, out_dir=tmp_path / "b")
    for name in ("manifest.jsonl", "groundtruth.tum", "inventory.json", "depth/pred_000002.dpth"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    synth_generate(spec, seed=4, out_dir=tmp_path / "c")
    assert (tmp_path / "a" / "depth/pred_000002.dpth").read_bytes() != (tmp_path / "c" / "depth/pred_000002.dpth").read_bytes()


def test_inventory_lists_block_events(tmp_path, scene_dict, wall, chair):
    chair.update(insert_block=1, remove_block=2)
    synth_generate(scene_dict(n_frames=40, objects=[wall, chair]), seed=0, out_dir=tmp_path)
    inv = json.loads((tmp_path / "inventory.json").read_text())
    assert inv["events"] == [
        {"block": 1, "event": "insert", "object": "chair", "label": "chair"},
        {"block": 2, "event": "remove", "object": "chair", "label": "chair"},
    ]
    scene = SyntheticScene(SceneSpec.from_dict(scene_dict(n_frames=40, objects=[wall, chair])))
    assert scene.masks(5) == []
    assert [m.class_label for m in scene.masks(15)] == ["chair"]
    assert [m.class_label for m in scene.masks(29)] == ["chair"]
    assert scene.masks(30) == []


def test_file_provider_matches_synthetic(tmp_path, scene_dict):
    spec = scene_dict(n_frames=12, predictions={"block_size": 10, "keyframe_count": 3, "grid_stride": 8})
    synth_generate(spec, seed=0, out_dir=tmp_path)
    assert (tmp_path / "predictions" / "list_000000.json").exists()

    blocks = list(form_block_inputs(open_stream(tmp_path), 10, 3, 8))
    assert [b.first_frame for b in blocks] == [0, 10]
    file_provider = FileProvider(tmp_path)
    synth_provider = SyntheticProvider.from_dir(tmp_path)
    for bi in blocks:
        file_out = provider_infer(file_provider, bi.frame_list, bi.query_points)
        synth_out = provider_infer(synth_provider, bi.frame_list, bi.query_points)
        for a, b in zip(file_out.predicted_depths, synth_out.predicted_depths):
            assert np.array_equal(np.nan_to_num(a.values), np.nan_to_num(b.values))
        for a, b in zip(file_out.extrinsics, synth_out.extrinsics):
            assert a.allclose(b, atol=1e-12)
        assert np.allclose(file_out.tracks.uv, synth_out.tracks.uv)
        assert np.array_equal(file_out.tracks.conf, synth_out.tracks.conf)

    with pytest.raises(PredictionMissing):
        file_provider.infer(blocks[0].frame_list, np.array([[1.0, 1.0]]))


def test_file_provider_missing_list(tmp_path, scene_dict):
    synth_generate(scene_dict(n_frames=3), seed=0, out_dir=tmp_path)
    frames = list(open_stream(tmp_path))
    with pytest.raises(PredictionMissing):
        FileProvider(tmp_path).infer(frames, np.zeros((0, 2)))


def test_provider_rejects_bad_request(scene_dict):
    scene = SyntheticScene(SceneSpec.from_dict(scene_dict(n_frames=2)))
    provider = SyntheticProvider(scene)
    with pytest.raises(DataError):
        provider_infer(provider, [], np.zeros((0, 2)))
    with pytest.raises(DataError):
        provider_infer(provider, [scene.frame(0)], np.array([[100.0, 1.0]]))


@pytest.mark.parametrize(
    "patch",
    [
        {"objects": []},
        {"objects": [{"id": "a", "kind": "box", "min": [0, 0, 1], "max": [1, 1, 2], "insert_block": 2, "remove_block": 1}]},
        {"objects": [{"id": "a", "kind": "cone"}]},
        {"objects": [{"id": "a", "kind": "plane", "point": [0, 0, 1], "normal": [0, 0, 1]},
                     {"id": "a", "kind": "plane", "point": [0, 0, 2], "normal": [0, 0, 1]}]},
        {"noise": {"pred_sigma": -1.0}},
        {"pred_scale": 0.0},
        {"n_frames": 0},
    ],
)
def test_invalid_scene_spec(scene_dict, patch):
    spec = scene_dict()
    spec.update(patch)
    with pytest.raises(InvalidSpec):
        SceneSpec.from_dict(spec)


def test_scene_spec_load_errors(tmp_path):
    with pytest.raises(InvalidSpec):
        SceneSpec.load(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(InvalidSpec):
        SceneSpec.load(tmp_path / "bad.json")
