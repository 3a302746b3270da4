"""Recent / Retained / Removed object states and the per-block change log."""

from .detector import Visibility, run_block_update, update_object_state, visible_fraction
from .schema import (
    RECENT,
    REMOVED,
    RETAINED,
    ChangeConfig,
    ChangeEvent,
    ObjectState,
)

__all__ = [
    "RECENT",
    "REMOVED",
    "RETAINED",
    "ChangeConfig",
    "ChangeEvent",
    "ObjectState",
    "Visibility",
    "run_block_update",
    "update_object_state",
    "visible_fraction",
]
