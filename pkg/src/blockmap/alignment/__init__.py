"""Block partitioning, scale recovery and rolling-reference alignment."""

from .aligner import (
    align_block,
    block_keyframes,
    block_scale,
    compute_delta,
    estimate_scale,
    form_block_inputs,
    partition,
    rescale,
    select_keyframes,
)
from .schema import AlignConfig, BlockInput, BlockState, GlobalMap, TrajectoryEntry
from .voxel import VoxelCloud

__all__ = [
    "AlignConfig",
    "BlockInput",
    "BlockState",
    "GlobalMap",
    "TrajectoryEntry",
    "VoxelCloud",
    "align_block",
    "block_keyframes",
    "block_scale",
    "compute_delta",
    "estimate_scale",
    "form_block_inputs",
    "partition",
    "rescale",
    "select_keyframes",
]
