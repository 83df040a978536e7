"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class LatentADError(Exception):
    """Base class for package errors."""


class ShapeError(LatentADError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(LatentADError, ValueError):
    """A structural invariant (hierarchy, architecture, config) is violated."""


class ConfigError(LatentADError, ValueError):
    """A configuration file or flag could not be parsed."""


class DataError(LatentADError, ValueError):
    """An input file could not be parsed or is internally inconsistent."""


class NumericError(LatentADError, RuntimeError):
    """A computation produced non-finite values."""
