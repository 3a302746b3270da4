from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

try:
    import yaml  # type: ignore
except Exception:  # pragma: no cover
    yaml = None

from .alignment.schema import AlignConfig
from .change.schema import ChangeConfig
from .errors import ConfigError
from .semantics.schema import TrackerConfig
from .smoothing import SmootherConfig
from .util import canonical_json, sha256_text

PROVIDERS = ("synthetic", "file")


@dataclass(frozen=True)
class StreamConfig:
    # stream directory or its manifest.jsonl
    path: Optional[str] = None
    # one of: synthetic | file
    provider: str = "synthetic"
    # file provider only; defaults to <stream>/predictions
    predictions_dir: Optional[str] = None

    def validate(self) -> None:
        if self.provider not in PROVIDERS:
            raise ConfigError(f"stream.provider must be one of {PROVIDERS}, got '{self.provider}'")


@dataclass(frozen=True)
class MapConfig:
    voxel_size: float = 0.02

    def validate(self) -> None:
        if float(self.voxel_size) < 0.0:
            raise ConfigError(f"map.voxel_size must be >= 0, got {self.voxel_size}")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/latest"
    checkpoint: bool = True

    def validate(self) -> None:
        if not str(self.dir):
            raise ConfigError("output.dir must not be empty")


@dataclass(frozen=True)
class RunnerConfig:
    # run ingest, provider and map update as separate pipeline stages
    threaded: bool = True
    queue_depth: int = 2
    # stop after this many blocks (None: whole stream)
    max_blocks: Optional[int] = None

    def validate(self) -> None:
        if int(self.queue_depth) < 1:
            raise ConfigError(f"runner.queue_depth must be >= 1, got {self.queue_depth}")
        if self.max_blocks is not None and int(self.max_blocks) < 1:
            raise ConfigError(f"runner.max_blocks must be >= 1, got {self.max_blocks}")


_SECTIONS = {
    "stream": StreamConfig,
    "align": AlignConfig,
    "smoother": SmootherConfig,
    "tracker": TrackerConfig,
    "change": ChangeConfig,
    "map": MapConfig,
    "output": OutputConfig,
    "runner": RunnerConfig,
}

# casts for fields whose default is None
_OPTIONAL_CASTS = {
    ("stream", "path"): str,
    ("stream", "predictions_dir"): str,
    ("align", "min_pred_conf"): float,
    ("runner", "max_blocks"): int,
}


def _cast(section: str, key: str, default: Any, value: Any) -> Any:
    if value is None:
        return None
    try:
        if default is None:
            return _OPTIONAL_CASTS.get((section, key), lambda v: v)(value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError(f"expected true/false, got {value!r}")
            return value
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        return type(default)(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}.{key}: {e}") from None


def _build_section(name: str, obj: Any) -> Any:
    cls = _SECTIONS[name]
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(obj) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key '{name}.{unknown[0]}'")
    defaults = cls()
    kwargs = {k: _cast(name, k, getattr(defaults, k), v) for k, v in obj.items()}
    return cls(**kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    change: ChangeConfig = field(default_factory=ChangeConfig)
    map: MapConfig = field(default_factory=MapConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    runner: RunnerConfig = field(default_factory=RunnerConfig)

    def validate(self) -> "PipelineConfig":
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def hash(self) -> str:
        """SHA-256 over the processing-relevant settings (output location and block limit excluded)."""
        d = self.to_dict()
        d.pop("output")
        d["runner"].pop("max_blocks")
        return sha256_text(canonical_json(d))

    @staticmethod
    def from_dict(obj: Dict[str, Any]) -> "PipelineConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(obj) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section '{unknown[0]}'")
        return PipelineConfig(**{name: _build_section(name, obj.get(name)) for name in _SECTIONS}).validate()

    @staticmethod
    def load(path: Optional[Path] = None, overrides: Iterable[str] = ()) -> "PipelineConfig":
        obj: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"Config file not found: {path}")
            text = path.read_text(encoding="utf-8")
            if path.suffix.lower() in (".yaml", ".yml"):
                if yaml is None:
                    raise ConfigError("YAML config requested but PyYAML is not installed. Use JSON or install pyyaml.")
                obj = yaml.safe_load(text) or {}
            else:
                try:
                    obj = json.loads(text)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
        for ov in overrides:
            apply_override(obj, ov)
        return PipelineConfig.from_dict(obj)

    def with_output(self, out_dir: str) -> "PipelineConfig":
        return replace(self, output=replace(self.output, dir=str(out_dir)))


def apply_override(obj: Dict[str, Any], item: str) -> None:
    """Apply ``section.key=value`` in place; the value is parsed as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key '{key}' must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section = obj.setdefault(parts[0], {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{parts[0]}' must be an object")
    section[parts[1]] = value
