"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation and file-format
problems exit 3, numeric/runtime failures exit 4 (argparse itself exits 2
on usage errors).
"""


class DditError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(DditError):
    """Invalid argument, configuration value, or input shape."""


class WeightFormatError(DditError):
    """Weight file is corrupt, truncated, or not a recognized format."""


class TraceFormatError(DditError):
    """A schedule trace file could not be parsed."""


class NumericError(DditError):
    """Non-finite values or an ill-conditioned linear problem."""
