"""Exception hierarchy for sake."""


class SakeError(Exception):
    """Base class for every error raised by sake."""


class ConfigurationError(SakeError, ValueError):
    """Invalid parameters or configuration documents."""


class GenerationError(SakeError):
    """A synthetic generator could not satisfy its constraints."""


class ShapeError(SakeError, ValueError):
    """Array or pool shapes are incompatible."""


class SplitError(SakeError, ValueError):
    """A trajectory pool cannot be partitioned as requested."""


# ============================================================================
# Trajectory file format
# ============================================================================


class PoolFormatError(SakeError, OSError):
    """Base class for trajectory/projector file errors."""


class BadMagicError(PoolFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(PoolFormatError):
    """File carries a format version this build cannot read."""


class TruncatedPayloadError(PoolFormatError):
    """Header promises more bytes than the file contains."""


class NonFiniteValueError(PoolFormatError):
    """Payload contains NaN or infinite values."""


# ============================================================================
# Pipeline
# ============================================================================


class FitError(SakeError):
    """A regression fit had no admissible data."""


class DiagnosticsError(SakeError):
    """Rollout diagnostics could not be computed."""


class SelectionError(SakeError):
    """A selector received incomplete or invalid scores."""


class SweepError(SakeError):
    """A full-protocol sweep failed for some (window, seed)."""


class PipelineError(SakeError):
    """An error raised inside a named selector stage."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
