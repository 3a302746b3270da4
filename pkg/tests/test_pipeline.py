from __future__ import annotations

import json
import tracemalloc

import pandas as pd
import pytest

from blockmap.errors import PredictionMissing
from blockmap.evaluation import read_tum
from blockmap.pipeline import (
    BLOCKS_CSV,
    DELIVERABLES,
    EVENTS_NAME,
    REPORT_NAME,
    RUN_MANIFEST_NAME,
    TIMED_STAGES,
    TIMINGS_NAME,
    TRAJECTORY_NAME,
    BlockPipeline,
)
from blockmap.provenance import PROVENANCE_NAME
from blockmap.stream import SceneSpec, SyntheticProvider, SyntheticScene, synth_generate


def _stream(tmp_path, spec, name="stream"):
    synth_generate(spec, seed=0, out_dir=tmp_path / name)
    return tmp_path / name


def _cfg(make_config, stream_dir, out_dir, **sections):
    sections.setdefault("stream", {})["path"] = str(stream_dir)
    sections.setdefault("output", {})["dir"] = str(out_dir)
    return make_config(**sections)


def _deliverables(out_dir):
    return {n: (out_dir / n).read_bytes() for n in DELIVERABLES}


def test_full_run_writes_outputs(tmp_path, scene_dict, make_config):
    sdir = _stream(tmp_path, scene_dict(n_frames=60))
    out = BlockPipeline(_cfg(make_config, sdir, tmp_path / "run")).run()
    for n in DELIVERABLES:
        assert (out / n).exists(), n
    lines = (out / TRAJECTORY_NAME).read_text().splitlines()
    assert len(lines) == 60
    traj = read_tum(out / TRAJECTORY_NAME)
    assert len(traj) == 60

    report = json.loads((out / REPORT_NAME).read_text())
    assert report["blocks_processed"] == 6
    assert report["n_poses"] == 60
    assert report["objects"] == 1

    events = [json.loads(x) for x in (out / EVENTS_NAME).read_text().splitlines()]
    assert [(e["event"], e["global_id"], e["frame_index"]) for e in events] == [("Appeared", 1, 9)]

    table = pd.read_csv(out / BLOCKS_CSV)
    assert table["block_index"].tolist() == list(range(6))
    assert set(table["scale_mode"]) == {"sensor"}

    manifest = json.loads((out / RUN_MANIFEST_NAME).read_text())
    assert manifest["status"] == "success"
    assert [s["stage"] for s in manifest["stage_log"]] == ["open_stream", "blocks", "export", "provenance"]
    assert set(manifest["stage_log"][1]["stage_s"]) == set(TIMED_STAGES)
    prov = json.loads((out / PROVENANCE_NAME).read_text())
    assert set(prov["deliverables"]) == set(DELIVERABLES)
    assert all(v is not None for v in prov["deliverables"].values())
    assert TIMINGS_NAME not in prov["deliverables"]

    timings = [json.loads(x) for x in (out / TIMINGS_NAME).read_text().splitlines()]
    assert [t["block_index"] for t in timings] == list(range(6))
    for t in timings:
        assert set(t["timing"]) == {f"{k}_s" for k in TIMED_STAGES}
        assert all(v >= 0.0 for v in t["timing"].values())


def test_resume_matches_uninterrupted_run(tmp_path, scene_dict, make_config, wall, chair):
    chair.update(remove_block=2)
    sdir = _stream(tmp_path, scene_dict(n_frames=60, objects=[wall, chair]))
    full = BlockPipeline(_cfg(make_config, sdir, tmp_path / "full")).run()

    part_dir = tmp_path / "part"
    BlockPipeline(_cfg(make_config, sdir, part_dir, runner={"threaded": False, "max_blocks": 3})).run()
    assert len((part_dir / TRAJECTORY_NAME).read_text().splitlines()) == 30
    # a stray line past the checkpoint is cut on resume
    with (part_dir / TRAJECTORY_NAME).open("a") as f:
        f.write("garbage\n")
    BlockPipeline(_cfg(make_config, sdir, part_dir)).run(resume=True)

    assert _deliverables(part_dir) == _deliverables(full)
    resumed = [json.loads(x)["block_index"] for x in (part_dir / TIMINGS_NAME).read_text().splitlines()]
    assert resumed == list(range(6))
    manifest = json.loads((part_dir / RUN_MANIFEST_NAME).read_text())
    assert manifest["resumed"] is True
    resume = manifest["stage_log"][1]
    assert (resume["stage"], resume["from_block"], resume["objects"]) == ("resume", 3, 1)


def test_threaded_and_inline_runs_agree(tmp_path, scene_dict, make_config):
    sdir = _stream(tmp_path, scene_dict(n_frames=40))
    inline = BlockPipeline(_cfg(make_config, sdir, tmp_path / "inline")).run()
    threaded = BlockPipeline(
        _cfg(make_config, sdir, tmp_path / "threaded", runner={"threaded": True, "queue_depth": 1})
    ).run()
    assert _deliverables(inline) == _deliverables(threaded)


def test_file_provider_run_matches_synthetic(tmp_path, scene_dict, make_config):
    spec = scene_dict(n_frames=30, predictions={"block_size": 10, "keyframe_count": 3, "grid_stride": 4})
    sdir = _stream(tmp_path, spec)
    synthetic = BlockPipeline(_cfg(make_config, sdir, tmp_path / "synthetic")).run()
    stored = BlockPipeline(_cfg(make_config, sdir, tmp_path / "file", stream={"provider": "file"})).run()
    a = read_tum(synthetic / TRAJECTORY_NAME)
    b = read_tum(stored / TRAJECTORY_NAME)
    for p, q in zip(a.poses, b.poses):
        assert p.allclose(q, atol=1e-9)


def test_provider_errors_name_the_block(tmp_path, scene_dict, make_config):
    sdir = _stream(tmp_path, scene_dict(n_frames=20))
    cfg = _cfg(make_config, sdir, tmp_path / "run", stream={"provider": "file"})
    with pytest.raises(PredictionMissing, match=r"block 0 \(frames 0\.\.9\)"):
        BlockPipeline(cfg).run()
    manifest = json.loads((tmp_path / "run" / RUN_MANIFEST_NAME).read_text())
    assert manifest["status"] == "failed"
    assert manifest["exception"]["type"] == "PredictionMissing"


def _peak(tmp_path, scene_dict, make_config, small_intrinsics, wall, n_frames):
    spec = scene_dict(n_frames=n_frames, intrinsics=small_intrinsics, objects=[wall])
    sdir = _stream(tmp_path, spec, name=f"s{n_frames}")
    provider = SyntheticProvider(SyntheticScene(SceneSpec.from_dict(spec)))
    cfg = _cfg(make_config, sdir, tmp_path / f"r{n_frames}", tracker={"grid_stride": 4, "max_median_points": 50})
    tracemalloc.start()
    try:
        BlockPipeline(cfg, provider=provider).run()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def test_memory_does_not_grow_with_stream_length(tmp_path, scene_dict, make_config, small_intrinsics, wall):
    # warm-up run so lazy imports and caches are not counted
    _peak(tmp_path / "warm", scene_dict, make_config, small_intrinsics, wall, 20)
    short = _peak(tmp_path, scene_dict, make_config, small_intrinsics, wall, 200)
    long = _peak(tmp_path, scene_dict, make_config, small_intrinsics, wall, 2000)
    assert long < 1.5 * short
