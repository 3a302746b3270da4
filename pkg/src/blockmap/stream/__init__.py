"""Frame streams, file formats, geometry providers and synthetic scenes."""

from .features import fallback_feature_score, frame_score
from .manifest import FrameStream, open_stream, write_stream
from .provider import FileProvider, GeometryProvider, SyntheticProvider, provider_infer
from .rle import decode_rle, encode_rle
from .schema import BACKGROUND, FrameRecord, InstanceMask, ProviderOutput, Tracks
from .synth import SceneSpec, SyntheticScene, synth_generate

__all__ = [
    "BACKGROUND",
    "FileProvider",
    "FrameRecord",
    "FrameStream",
    "GeometryProvider",
    "InstanceMask",
    "ProviderOutput",
    "SceneSpec",
    "SyntheticProvider",
    "SyntheticScene",
    "Tracks",
    "decode_rle",
    "encode_rle",
    "fallback_feature_score",
    "frame_score",
    "open_stream",
    "provider_infer",
    "synth_generate",
    "write_stream",
]
