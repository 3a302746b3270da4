"""Instance masks to persistent 3-D objects: association, tracklets and re-identification."""

from .association import filter_tracks, mutual_assign, support_matrix, update_tracklets
from .masks import erode_mask, sample_grid
from .reid import bbox_iou, chamfer, reid_bbox, reid_chamfer
from .schema import EMPTY, UNTRACKED, GlobalObject, ObjectRegistry, TrackerConfig, Tracklet
from .tracker import BlockTracking, integrate_block

__all__ = [
    "EMPTY",
    "UNTRACKED",
    "BlockTracking",
    "GlobalObject",
    "ObjectRegistry",
    "TrackerConfig",
    "Tracklet",
    "bbox_iou",
    "chamfer",
    "erode_mask",
    "filter_tracks",
    "integrate_block",
    "mutual_assign",
    "reid_bbox",
    "reid_chamfer",
    "sample_grid",
    "support_matrix",
    "update_tracklets",
]
