"""End-of-block checkpoints.

A checkpoint directory holds ``state.json`` (scalars, poses, object metadata,
line counts of the streamed outputs and the SHA-256 of the array file) and
``arrays.npz`` (map and object point clouds). Both are written to temporary
names first and renamed into place, state last.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..alignment.schema import GlobalMap
from ..alignment.voxel import VoxelCloud
from ..errors import CheckpointMismatch, CorruptCheckpoint, MissingFile
from ..geometry import ExtrinsicPose
from ..semantics.schema import GlobalObject, ObjectRegistry
from ..util import sha256_file, write_json

STATE_NAME = "state.json"
ARRAYS_NAME = "arrays.npz"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class MapCheckpoint:
    config_hash: str
    last_block: int
    gmap: GlobalMap
    registry: ObjectRegistry
    # streamed output file name -> number of lines written so far
    outputs: Dict[str, int] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        counts: Dict[str, int] = {}
        for o in self.registry:
            counts[o.state] = counts.get(o.state, 0) + 1
        return {
            "config_hash": self.config_hash,
            "last_block": int(self.last_block),
            "blocks_processed": int(self.gmap.blocks_processed),
            "n_poses": int(self.gmap.n_poses),
            "last_frame": self.gmap.last_frame,
            "map_points": len(self.gmap.cloud),
            "objects": len(self.registry),
            "objects_by_state": dict(sorted(counts.items())),
            "keyframes": list(self.gmap.keyframe_indices),
            "outputs": dict(sorted(self.outputs.items())),
        }


def _pose(E: Optional[ExtrinsicPose]) -> Optional[list]:
    return None if E is None else E.to_row12()


def _unpose(v: Optional[list]) -> Optional[ExtrinsicPose]:
    return None if v is None else ExtrinsicPose.from_row12(v)


def _object_meta(o: GlobalObject) -> Dict[str, Any]:
    return {
        "global_id": o.global_id,
        "class": o.class_label,
        "first_seen": o.first_seen,
        "last_seen": o.last_seen,
        "created_block": o.created_block,
        "last_detected_block": o.last_detected_block,
        "state": o.state,
        "confidence": o.confidence,
        "median_frames": list(o.median_frames),
        "median_points": [list(p) for p in o.median_points],
    }


def save_checkpoint(ck_dir: Path, ck: MapCheckpoint) -> Path:
    ck_dir = Path(ck_dir)
    ck_dir.mkdir(parents=True, exist_ok=True)
    g = ck.gmap
    arrays: Dict[str, np.ndarray] = {"map_points": g.cloud.points, "map_frames": g.cloud.frame_indices}
    for o in ck.registry:
        arrays[f"obj_{o.global_id}_points"] = o.cloud.points
        arrays[f"obj_{o.global_id}_frames"] = o.cloud.frame_indices
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp_arrays = ck_dir / (ARRAYS_NAME + ".tmp")
    tmp_arrays.write_bytes(buf.getvalue())
    os.replace(tmp_arrays, ck_dir / ARRAYS_NAME)

    state = {
        "version": CHECKPOINT_VERSION,
        "config_hash": ck.config_hash,
        "last_block": int(ck.last_block),
        "arrays_sha256": sha256_file(ck_dir / ARRAYS_NAME),
        "outputs": dict(ck.outputs),
        "map": {
            "voxel_size": g.cloud.voxel_size,
            "e_ref": _pose(g.e_ref),
            "keyframe_indices": list(g.keyframe_indices),
            "keyframe_assignments": {str(f): {str(m): gid for m, gid in a.items()} for f, a in g.keyframe_assignments.items()},
            "last_scale": g.last_scale,
            "blocks_processed": g.blocks_processed,
            "n_poses": g.n_poses,
            "last_frame": g.last_frame,
            "last_pose": _pose(g.last_pose),
        },
        "registry": {
            "voxel_size": ck.registry.voxel_size,
            "next_id": ck.registry.next_id,
            "n_created": ck.registry.n_created,
            "n_untracked": ck.registry.n_untracked,
            "aliases": {str(k): v for k, v in ck.registry.aliases.items()},
            "objects": [_object_meta(o) for o in ck.registry],
        },
    }
    tmp_state = ck_dir / (STATE_NAME + ".tmp")
    write_json(tmp_state, state)
    os.replace(tmp_state, ck_dir / STATE_NAME)
    return ck_dir / STATE_NAME


def load_checkpoint(ck_dir: Path, expected_hash: Optional[str] = None) -> MapCheckpoint:
    ck_dir = Path(ck_dir)
    sp = ck_dir / STATE_NAME
    ap = ck_dir / ARRAYS_NAME
    if not sp.exists():
        raise MissingFile(sp, "checkpoint state")
    if not ap.exists():
        raise CorruptCheckpoint(f"checkpoint arrays missing: {ap}")
    try:
        state = json.loads(sp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptCheckpoint(f"{sp}: {e}") from None
    if state.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{sp}: unsupported checkpoint version {state.get('version')}")
    if sha256_file(ap) != state.get("arrays_sha256"):
        raise CorruptCheckpoint(f"{ap}: checksum does not match {STATE_NAME}")
    if expected_hash is not None and state["config_hash"] != expected_hash:
        raise CheckpointMismatch(
            f"checkpoint was written with config {state['config_hash'][:12]}, current config is {expected_hash[:12]}"
        )
    try:
        with np.load(ap, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        m = state["map"]
        gmap = GlobalMap(
            cloud=VoxelCloud.from_state(m["voxel_size"], arrays["map_points"], arrays["map_frames"]),
            e_ref=_unpose(m["e_ref"]),
            keyframe_indices=[int(x) for x in m["keyframe_indices"]],
            keyframe_assignments={
                int(f): {int(k): int(v) for k, v in a.items()} for f, a in m["keyframe_assignments"].items()
            },
            last_scale=m["last_scale"],
            blocks_processed=int(m["blocks_processed"]),
            n_poses=int(m["n_poses"]),
            last_frame=m["last_frame"],
            last_pose=_unpose(m["last_pose"]),
        )
        r = state["registry"]
        reg = ObjectRegistry(
            voxel_size=float(r["voxel_size"]),
            next_id=int(r["next_id"]),
            n_created=int(r["n_created"]),
            n_untracked=int(r["n_untracked"]),
            aliases={int(k): int(v) for k, v in r["aliases"].items()},
        )
        for o in r["objects"]:
            gid = int(o["global_id"])
            reg.objects[gid] = GlobalObject(
                global_id=gid,
                class_label=str(o["class"]),
                cloud=VoxelCloud.from_state(reg.voxel_size, arrays[f"obj_{gid}_points"], arrays[f"obj_{gid}_frames"]),
                first_seen=int(o["first_seen"]),
                last_seen=int(o["last_seen"]),
                created_block=int(o["created_block"]),
                last_detected_block=int(o["last_detected_block"]),
                state=str(o["state"]),
                confidence=float(o["confidence"]),
                median_frames=[int(x) for x in o["median_frames"]],
                median_points=[tuple(float(x) for x in p) for p in o["median_points"]],
            )
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptCheckpoint(f"{ck_dir}: {type(e).__name__}: {e}") from None
    return MapCheckpoint(
        config_hash=str(state["config_hash"]),
        last_block=int(state["last_block"]),
        gmap=gmap,
        registry=reg,
        outputs={str(k): int(v) for k, v in state["outputs"].items()},
    )
