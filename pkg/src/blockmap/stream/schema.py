from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..errors import DataError
from ..geometry import DepthMap, ExtrinsicPose, Intrinsics
from .rle import decode_rle, encode_rle, rle_from_text, rle_to_text

BACKGROUND = -1


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """One 2-D detection: class label, binary silhouette and detector confidence."""

    class_label: str
    mask: np.ndarray
    confidence: float = 1.0

    def __post_init__(self) -> None:
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {m.shape}")
        if not m.any():
            raise DataError(f"mask '{self.class_label}' has no set pixel")
        if not (0.0 <= float(self.confidence) <= 1.0):
            raise DataError(f"mask confidence {self.confidence} outside [0, 1]")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {"class": self.class_label, "rle": rle_to_text(encode_rle(self.mask)), "conf": float(self.confidence)}

    @staticmethod
    def from_dict(obj: Dict[str, Any], width: int, height: int) -> "InstanceMask":
        counts = rle_from_text(obj["rle"])
        return InstanceMask(
            class_label=str(obj["class"]),
            mask=decode_rle(counts, width, height),
            confidence=float(obj.get("conf", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class FrameRecord:
    frame_index: int
    timestamp: float
    intrinsics: Intrinsics
    sensor_depth: Optional[DepthMap] = None
    masks: Tuple[InstanceMask, ...] = ()
    feature_score: Optional[float] = None
    pose: Optional[ExtrinsicPose] = None
    depth_sensor_path: Optional[str] = None
    depth_pred_path: Optional[str] = None
    rgb_path: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "masks", tuple(self.masks))
        if self.sensor_depth is not None:
            self.sensor_depth.check_matches(self.intrinsics, what=f"frame {self.frame_index} sensor depth")
        for m in self.masks:
            if m.mask.shape != self.intrinsics.shape:
                raise DataError(f"frame {self.frame_index}: mask shape {m.mask.shape} != image {self.intrinsics.shape}")
        if self.feature_score is not None and not (float(self.feature_score) >= 0.0):
            raise DataError(f"frame {self.frame_index}: feature_score must be >= 0")


@dataclass(frozen=True, eq=False)
class Tracks:
    """Point trajectories across a frame list.

    ``uv[q, j]`` is the pixel of query point ``q`` in list frame ``j`` and
    ``conf[q, j]`` its confidence. Column 0 holds the query points themselves.
    """

    uv: np.ndarray
    conf: np.ndarray

    def __post_init__(self) -> None:
        uv = np.asarray(self.uv, dtype=float)
        conf = np.asarray(self.conf, dtype=float)
        if uv.ndim != 3 or uv.shape[2] != 2 or conf.shape != uv.shape[:2]:
            raise DataError(f"tracks: uv {uv.shape} / conf {conf.shape} do not agree")
        if conf.size and (np.nanmin(conf) < 0.0 or np.nanmax(conf) > 1.0):
            raise DataError("tracks: confidences must lie in [0, 1]")
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "conf", conf)

    @property
    def n_points(self) -> int:
        return int(self.uv.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.uv.shape[1])


@dataclass(frozen=True, eq=False)
class ProviderOutput:
    predicted_depths: List[DepthMap]
    extrinsics: List[ExtrinsicPose]
    tracks: Tracks
    depth_confidences: Optional[List[np.ndarray]] = field(default=None)

    def validate(self, n_frames: int) -> None:
        if len(self.predicted_depths) != n_frames or len(self.extrinsics) != n_frames:
            raise DataError(
                f"provider returned {len(self.predicted_depths)} depths / {len(self.extrinsics)} poses for {n_frames} frames"
            )
        if self.tracks.n_frames != n_frames:
            raise DataError(f"provider tracks span {self.tracks.n_frames} frames, expected {n_frames}")
        if self.depth_confidences is not None and len(self.depth_confidences) != n_frames:
            raise DataError("provider depth confidences do not match the frame list")
        E0 = self.extrinsics[0]
        if not (np.allclose(E0.R, np.eye(3), atol=1e-6, rtol=0) and np.allclose(E0.t, 0.0, atol=1e-6, rtol=0)):
            raise DataError("provider extrinsics[0] must be the identity")
