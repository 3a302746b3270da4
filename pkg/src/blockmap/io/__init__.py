"""On-disk formats: PLY clouds, checkpoints and run exports."""

from .checkpoint import MapCheckpoint, load_checkpoint, save_checkpoint
from .exports import export_events, export_map, export_objects, export_semantic_map
from .ply import read_ply, write_ply

__all__ = [
    "MapCheckpoint",
    "export_events",
    "export_map",
    "export_objects",
    "export_semantic_map",
    "load_checkpoint",
    "read_ply",
    "save_checkpoint",
    "write_ply",
]
