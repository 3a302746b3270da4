from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ..errors import ConfigError, InvariantViolation
from ..geometry import ExtrinsicPose
from ..stream.schema import FrameRecord, ProviderOutput
from .voxel import VoxelCloud

ANCHOR_POSES = ("smoothed", "raw")


@dataclass(frozen=True)
class AlignConfig:
    block_size: int = 10
    keyframe_count: int = 3
    near_thresh: float = 0.3
    far_thresh: float = 6.0
    # pixels whose provider depth confidence is below this are left out of the scale fit
    min_pred_conf: Optional[float] = None
    # pixel stride used when unprojecting predicted depth into the global map
    grid_stride: int = 4
    anchor_pose: str = "smoothed"

    def validate(self) -> None:
        n, k = int(self.block_size), int(self.keyframe_count)
        if n < 2:
            raise ConfigError(f"align.block_size must be >= 2, got {n}")
        if not (0 < k < n):
            raise ConfigError(f"align.keyframe_count must satisfy 0 < k < block_size (k={k}, n={n})")
        if not (0.0 < float(self.near_thresh) < float(self.far_thresh)):
            raise ConfigError(
                f"align thresholds must satisfy 0 < near_thresh < far_thresh (got {self.near_thresh}, {self.far_thresh})"
            )
        if self.min_pred_conf is not None and not (0.0 <= float(self.min_pred_conf) <= 1.0):
            raise ConfigError(f"align.min_pred_conf must lie in [0, 1], got {self.min_pred_conf}")
        if int(self.grid_stride) < 1:
            raise ConfigError(f"align.grid_stride must be >= 1, got {self.grid_stride}")
        if self.anchor_pose not in ANCHOR_POSES:
            raise ConfigError(f"align.anchor_pose must be one of {ANCHOR_POSES}, got '{self.anchor_pose}'")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class BlockInput:
    """One unit of work: the previous block's keyframes (anchors) followed by the block's frames."""

    block_index: int
    anchors: List[FrameRecord]
    frames: List[FrameRecord]
    query_points: np.ndarray

    @property
    def frame_list(self) -> List[FrameRecord]:
        return list(self.anchors) + list(self.frames)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    @property
    def first_frame(self) -> int:
        return int(self.frames[0].frame_index)

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1].frame_index)


@dataclass(frozen=True)
class TrajectoryEntry:
    frame_index: int
    timestamp: float
    raw: ExtrinsicPose
    smoothed: ExtrinsicPose


@dataclass(eq=False)
class BlockState:
    """Everything computed while aligning one block."""

    block_index: int
    block: BlockInput
    output: ProviderOutput  # rescaled
    frame_scales: List[Optional[float]]
    block_scale: float
    scale_mode: str  # sensor | fallback | monocular
    delta: ExtrinsicPose
    aligned: List[ExtrinsicPose]  # whole frame list, anchors first
    smoothed: List[ExtrinsicPose]  # block frames only
    keyframe_positions: List[int]
    e_ref_before: Optional[ExtrinsicPose]
    e_ref_after: ExtrinsicPose
    points_added: int = 0

    @property
    def n_anchors(self) -> int:
        return self.block.n_anchors

    @property
    def frames(self) -> List[FrameRecord]:
        return self.block.frames

    @property
    def block_aligned(self) -> List[ExtrinsicPose]:
        return self.aligned[self.n_anchors:]

    def block_depth(self, p: int):
        """Scaled predicted depth of block frame ``p``."""
        return self.output.predicted_depths[self.n_anchors + p]

    @property
    def keyframe_indices(self) -> List[int]:
        return [int(self.frames[p].frame_index) for p in self.keyframe_positions]

    def to_report(self) -> Dict[str, Any]:
        return {
            "block_index": int(self.block_index),
            "first_frame": self.block.first_frame,
            "last_frame": self.block.last_frame,
            "n_frames": len(self.frames),
            "anchor_frames": [int(f.frame_index) for f in self.block.anchors],
            "frame_scales": [None if s is None else float(s) for s in self.frame_scales],
            "block_scale": float(self.block_scale),
            "scale_mode": self.scale_mode,
            "delta": self.delta.to_row12(),
            "keyframe_indices": self.keyframe_indices,
            "points_added": int(self.points_added),
        }


@dataclass(eq=False)
class GlobalMap:
    """Rolling alignment state plus the accumulated, voxel-subsampled point cloud.

    Trajectory entries are kept only until drained to disk; ``n_poses`` and
    ``last_frame`` carry the running totals.
    """

    cloud: VoxelCloud
    e_ref: Optional[ExtrinsicPose] = None
    keyframe_indices: List[int] = field(default_factory=list)
    # frame_index -> {mask index: global id}, for the current keyframe memory only
    keyframe_assignments: Dict[int, Dict[int, int]] = field(default_factory=dict)
    last_scale: Optional[float] = None
    blocks_processed: int = 0
    n_poses: int = 0
    last_frame: Optional[int] = None
    last_pose: Optional[ExtrinsicPose] = None
    pending: List[TrajectoryEntry] = field(default_factory=list)

    @staticmethod
    def empty(voxel_size: float) -> "GlobalMap":
        return GlobalMap(cloud=VoxelCloud(voxel_size))

    def append_trajectory(self, entries: List[TrajectoryEntry]) -> None:
        for e in entries:
            if self.last_frame is not None and e.frame_index <= self.last_frame:
                raise InvariantViolation(
                    f"trajectory frame {e.frame_index} does not follow frame {self.last_frame}"
                )
            self.pending.append(e)
            self.last_frame = int(e.frame_index)
            self.last_pose = e.raw
            self.n_poses += 1

    def drain_trajectory(self) -> List[TrajectoryEntry]:
        out, self.pending = self.pending, []
        return out
