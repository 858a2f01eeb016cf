"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, data
errors exit 2, numerical failures exit 3.
"""


class HandDepthError(Exception):
    """Base class for all package errors."""


class ShapeError(HandDepthError, ValueError):
    """An array has the wrong shape; the message names the offending axis."""


class ConfigError(HandDepthError, ValueError):
    """An invalid model/training/augmentation configuration."""


class DataError(HandDepthError, ValueError):
    """Unusable input data (empty masks, broken calibration, bad files)."""


class NumericalError(HandDepthError, ArithmeticError):
    """Non-finite values where finite ones are required (NaN loss/grads)."""


class UsageError(HandDepthError, ValueError):
    """Bad command-line arguments."""
