"""Exception types shared across the package."""


class StarError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(StarError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(StarError, ArithmeticError):
    """A computation produced or encountered a non-finite value."""


class DomainError(StarError, ValueError):
    """Domain indicator outside the configured 1..M range."""


class ContractViolation(StarError, RuntimeError):
    """A caller broke a protocol precondition (mixed-domain batch, missing
    forward cache, ...)."""


class DegenerateInputError(StarError, ValueError):
    """Input too small to normalize (batch of one, single-feature row)."""


class UninitializedStatsError(StarError, RuntimeError):
    """Inference requested before moving statistics were populated."""


class DataError(StarError, ValueError):
    """Invalid data: bad labels, malformed records, unknown domains."""


class ParseError(DataError):
    """Malformed line in a text data file; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(StarError, ValueError):
    """Invalid or unknown configuration."""


class CalibrationError(StarError, RuntimeError):
    """A per-domain CTR target cannot be met by bias calibration."""


class MetricError(StarError, ValueError):
    """A metric is undefined for the given predictions."""


class UndefinedAucError(MetricError):
    """AUC is undefined for a single-class group."""


class FoldError(StarError, RuntimeError):
    """Weight folding failed (e.g. unpopulated domain statistics)."""


class CheckpointError(StarError, RuntimeError):
    """Corrupt or unreadable checkpoint."""


class VersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""
