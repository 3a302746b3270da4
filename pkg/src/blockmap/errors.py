"""Exception hierarchy.

Every error raised on purpose by the engine derives from ``BlockmapError`` and
carries the process exit code the CLI maps it to:

  1  configuration error (bad config, bad scene spec, checkpoint mismatch)
  2  data error (missing/malformed inputs, unusable numerics)
  3  internal invariant violation
"""

from __future__ import annotations


class BlockmapError(Exception):
    """Base class for engine errors."""

    exit_code = 3


class ConfigError(BlockmapError, ValueError):
    """Raised when a configuration value violates its invariants."""

    exit_code = 1


class InvalidSpec(ConfigError):
    """Raised when a synthetic scene spec is invalid."""


class CheckpointMismatch(ConfigError):
    """Raised when resuming with a config whose hash differs from the checkpoint's."""


class DataError(BlockmapError):
    """Raised when input data is missing, malformed or numerically unusable."""

    exit_code = 2


class MissingFile(DataError, FileNotFoundError):
    def __init__(self, path: object, what: str = "file") -> None:
        super().__init__(f"missing {what}: {path}")
        self.path = str(path)


class MalformedManifest(DataError):
    pass


class NonMonotoneIndex(DataError):
    pass


class PredictionMissing(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class ParseError(DataError):
    """Raised with the offending file and 1-based line number."""

    def __init__(self, path: object, line_no: int, msg: str) -> None:
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = str(path)
        self.line_no = int(line_no)


class NumericalError(DataError):
    """Base for numerically unusable inputs."""


class TooShort(NumericalError):
    pass


class NoValidScale(NumericalError):
    pass


class NonPositiveScale(NumericalError):
    pass


class EmptyObject(NumericalError):
    pass


class EmptyCloud(NumericalError):
    pass


class NoMatches(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class InvariantViolation(BlockmapError):
    """Raised when an internal invariant does not hold."""

    exit_code = 3


def with_context(err: BlockmapError, context: str) -> BlockmapError:
    """Return a copy of ``err`` (same class) whose message is prefixed with ``context``."""
    try:
        new = type(err).__new__(type(err))
        Exception.__init__(new, f"{context}: {err}")
        new.__dict__.update(getattr(err, "__dict__", {}))
        return new
    except Exception:  # pragma: no cover
        return err
