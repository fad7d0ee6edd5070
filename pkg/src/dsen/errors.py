"""Exception taxonomy shared across the package.

Grouped by how the CLI maps them to exit codes: configuration/usage problems
(exit 2), data/precondition problems (exit 3), numeric failures (exit 4).
"""


class DsenError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DsenError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(DsenError, ValueError):
    """Operands have incompatible shapes."""


class InvalidSignalError(DsenError, ValueError):
    """Signal contains non-finite values or is otherwise malformed."""


class UnsupportedResampleError(DsenError, ValueError):
    """Requested resampling ratio is not an integer decimation."""


class TooShortSignalError(DsenError, ValueError):
    """Recording too short for the requested filter."""


class EmptyBoundariesError(DsenError, ValueError):
    """Segmentation called with no intervals."""


class DegenerateDataError(DsenError, ValueError):
    """Input has no usable variation (constant sample, zero-variance
    channel, zero-norm vector)."""


class UnsupportedSizeError(DsenError, ValueError):
    """Sample size outside the supported range of a statistical test."""


class InsufficientDataError(DsenError, ValueError):
    """Not enough samples, pairs, or groups to run the operation."""


class SplitError(InsufficientDataError):
    """Dataset cannot be split into the required train/test composition."""


class LabelError(DsenError, ValueError):
    """Class label outside the supported set."""


class GraphTooSmallError(DsenError, ValueError):
    """Graph has fewer than two vertices."""


class NumericError(DsenError, ArithmeticError):
    """Non-finite values produced, or an iterative routine failed to
    converge."""


class DataFormatError(DsenError, ValueError):
    """File does not carry the expected magic/version/header."""


class DataCorruptionError(DataFormatError):
    """File header and payload disagree.

    ``byte_offset`` points at the first byte that could not be satisfied.
    """

    def __init__(self, message, byte_offset=None):
        super().__init__(message)
        self.byte_offset = byte_offset


class IngestionError(DsenError, ValueError):
    """CSV import manifest and data files disagree."""
