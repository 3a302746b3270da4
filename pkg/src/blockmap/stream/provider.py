"""Geometry providers.

A provider turns a frame list into predicted depths, list-relative extrinsics
(first frame identity) and point tracks for query pixels of the list's first
frame. Two implementations ship: ``SyntheticProvider`` computes everything
analytically from a ``SyntheticScene``; ``FileProvider`` reads precomputed
predictions stored per frame list under ``predictions/list_<first>.json``.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np

from ..errors import DataError, MissingFile, PredictionMissing
from ..geometry import DepthMap, ExtrinsicPose
from .depth_io import read_depth
from .schema import FrameRecord, ProviderOutput, Tracks
from .synth import SyntheticScene

logger = logging.getLogger(__name__)

PREDICTIONS_DIR = "predictions"


class GeometryProvider(Protocol):
    def infer(self, frames: Sequence[FrameRecord], query_points: np.ndarray) -> ProviderOutput:
        ...


def _check_request(frames: Sequence[FrameRecord], query_points: np.ndarray) -> np.ndarray:
    if not frames:
        raise DataError("provider called with an empty frame list")
    q = np.asarray(query_points, dtype=float).reshape(-1, 2)
    K = frames[0].intrinsics
    if q.size and (np.any(q[:, 0] < 0) or np.any(q[:, 0] >= K.width) or np.any(q[:, 1] < 0) or np.any(q[:, 1] >= K.height)):
        raise DataError("query points must lie inside the first frame")
    return q


def provider_infer(provider: GeometryProvider, frames: Sequence[FrameRecord], query_points: np.ndarray) -> ProviderOutput:
    q = _check_request(frames, query_points)
    out = provider.infer(list(frames), q)
    out.validate(len(frames))
    return out


class SyntheticProvider:
    """Analytic oracle backed by the scene the stream was generated from."""

    def __init__(self, scene: SyntheticScene) -> None:
        self.scene = scene

    @staticmethod
    def from_dir(stream_dir: Path) -> "SyntheticProvider":
        return SyntheticProvider(SyntheticScene.from_dir(stream_dir))

    def infer(self, frames: Sequence[FrameRecord], query_points: np.ndarray) -> ProviderOutput:
        idx = [int(f.frame_index) for f in frames]
        return ProviderOutput(
            predicted_depths=[self.scene.predicted_depth(f) for f in idx],
            extrinsics=self.scene.relative_extrinsics(idx),
            tracks=self.scene.tracks(idx, query_points),
        )


def list_file(pred_dir: Path, first_frame_index: int) -> Path:
    return Path(pred_dir) / f"list_{int(first_frame_index):06d}.json"


class FileProvider:
    """Precomputed predictions.

    Depths come from each frame's ``depth_pred`` file; extrinsics and tracks
    from the list file named after the list's first frame index.
    """

    def __init__(self, stream_dir: Path, predictions_dir: Optional[Path] = None) -> None:
        self.stream_dir = Path(stream_dir)
        self.pred_dir = Path(predictions_dir) if predictions_dir else self.stream_dir / PREDICTIONS_DIR

    def _depth(self, frame: FrameRecord) -> DepthMap:
        if frame.depth_pred_path is None:
            raise PredictionMissing(f"frame {frame.frame_index} has no stored predicted depth")
        p = Path(frame.depth_pred_path)
        p = p if p.is_absolute() else self.stream_dir / p
        try:
            d = read_depth(p)
        except MissingFile:
            raise PredictionMissing(f"frame {frame.frame_index}: predicted depth file missing: {p}") from None
        d.check_matches(frame.intrinsics, what=f"frame {frame.frame_index} predicted depth")
        return d

    def infer(self, frames: Sequence[FrameRecord], query_points: np.ndarray) -> ProviderOutput:
        idx = [int(f.frame_index) for f in frames]
        path = list_file(self.pred_dir, idx[0])
        if not path.exists():
            raise PredictionMissing(f"no stored prediction for frame list starting at {idx[0]} ({path})")
        obj = json.loads(path.read_text(encoding="utf-8"))
        stored = [int(x) for x in obj.get("frame_indices", [])]
        missing = [f for f in idx if f not in stored]
        if missing:
            raise PredictionMissing(f"{path.name}: no stored prediction for frames {missing}")
        pos = [stored.index(f) for f in idx]
        poses = [ExtrinsicPose.from_row12(obj["extrinsics"][p]) for p in pos]
        uv = np.asarray(obj["tracks"]["uv"], dtype=float)
        conf = np.asarray(obj["tracks"]["conf"], dtype=float)
        q = np.asarray(query_points, dtype=float).reshape(-1, 2)
        if uv.shape[0] != q.shape[0] or not np.allclose(uv[:, pos[0], :], q, atol=1e-6):
            raise PredictionMissing(f"{path.name}: tracks were stored for different query points")
        conf_maps = None
        if obj.get("depth_confidence"):
            conf_maps = [np.asarray(obj["depth_confidence"][p], dtype=float) for p in pos]
        return ProviderOutput(
            predicted_depths=[self._depth(f) for f in frames],
            extrinsics=poses,
            tracks=Tracks(uv=uv[:, pos, :], conf=conf[:, pos]),
            depth_confidences=conf_maps,
        )


def write_list_predictions(pred_dir: Path, frames: Sequence[FrameRecord], output: ProviderOutput) -> Path:
    pred_dir = Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    path = list_file(pred_dir, frames[0].frame_index)
    obj: Dict[str, Any] = {
        "frame_indices": [int(f.frame_index) for f in frames],
        "extrinsics": [E.to_row12() for E in output.extrinsics],
        "tracks": {"uv": output.tracks.uv.tolist(), "conf": output.tracks.conf.tolist()},
    }
    path.write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")
    return path


def export_predictions(
    provider: GeometryProvider,
    stream_dir: Path,
    block_size: int,
    keyframe_count: int,
    grid_stride: int,
) -> List[Path]:
    """Run ``provider`` over the frame lists the engine will request and store them."""
    from ..alignment.aligner import form_block_inputs
    from .manifest import open_stream

    stream = open_stream(Path(stream_dir))
    written: List[Path] = []
    for bi in form_block_inputs(stream, block_size, keyframe_count, grid_stride):
        out = provider_infer(provider, bi.frame_list, bi.query_points)
        written.append(write_list_predictions(Path(stream_dir) / PREDICTIONS_DIR, bi.frame_list, out))
    logger.info("stored %d frame-list predictions under %s", len(written), Path(stream_dir) / PREDICTIONS_DIR)
    return written
