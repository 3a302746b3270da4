from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict

from ..errors import ConfigError, InvariantViolation

RECENT = "Recent"
RETAINED = "Retained"
REMOVED = "Removed"
STATES = (RECENT, RETAINED, REMOVED)

APPEARED = "Appeared"
REDETECTED = "Redetected"
BECAME_RETAINED = "BecameRetained"
CONFIDENCE_DECAYED = "ConfidenceDecayed"
REMOVED_EVENT = "Removed"
EVENTS = (APPEARED, REDETECTED, BECAME_RETAINED, CONFIDENCE_DECAYED, REMOVED_EVENT)


@dataclass(frozen=True)
class ChangeConfig:
    delta: float = 0.001
    eta: float = 0.34
    tau_vis: float = 0.0
    tau_area: float = 0.0
    evaluate_every_frame: bool = False

    def validate(self) -> None:
        if float(self.delta) <= 0.0:
            raise ConfigError(f"change.delta must be > 0, got {self.delta}")
        for name in ("eta", "tau_vis", "tau_area"):
            v = float(getattr(self, name))
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"change.{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ObjectState:
    state: str = RECENT
    confidence: float = 1.0

    def __post_init__(self) -> None:
        c = float(self.confidence)
        if self.state not in STATES:
            raise InvariantViolation(f"unknown object state '{self.state}'")
        if not (0.0 <= c <= 1.0):
            raise InvariantViolation(f"confidence {c} outside [0, 1]")
        if self.state == RECENT and c != 1.0:
            raise InvariantViolation("a Recent object must have confidence 1")
        if c == 0.0 and self.state != REMOVED:
            raise InvariantViolation("an object with zero confidence must be Removed")


@dataclass(frozen=True)
class ChangeEvent:
    block_index: int
    frame_index: int
    timestamp: float
    global_id: int
    event: str
    confidence_after: float
    class_label: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "block_index": int(self.block_index),
            "frame_index": int(self.frame_index),
            "timestamp": float(self.timestamp),
            "global_id": int(self.global_id),
            "event": self.event,
            "confidence_after": float(self.confidence_after),
            "class": self.class_label,
        }
