"""Exception hierarchy. Everything user-input-shaped derives from LmdkitError,
which the CLI maps to exit code 2; anything else is an internal failure (exit 1).
"""


class LmdkitError(Exception):
    """Base class for invalid inputs, bad files and failed preconditions."""


class FormatError(LmdkitError):
    """File magic/version does not identify a known format."""


class CorruptionError(LmdkitError):
    """File is structurally valid but its payload breaks the header's promise."""


class ValidationError(LmdkitError):
    """Data violates a dataset invariant (non-finite rows, degenerate dims...)."""


class AlignmentError(LmdkitError):
    """Datasets that must be row-aligned are not."""


class DimensionError(LmdkitError):
    """Operands have incompatible shapes."""


class EmptyAccumulatorError(LmdkitError):
    """Moment statistics requested from an accumulator with no observations."""


class RankDeficiencyError(LmdkitError):
    """A full-rank solve hit a numerically singular system matrix."""


class ConfigError(LmdkitError):
    """Solver or analysis configuration is self-inconsistent."""


class DegenerateTargetError(LmdkitError):
    """Target has zero total variance, so R2 is undefined."""
