"""Exception taxonomy shared by all modules.

The CLI maps these onto stable exit codes: config errors exit 2, data
errors exit 3, shape/numerics/runtime errors exit 4.
"""


class SleepKDError(Exception):
    """Base class for all library errors."""


class ConfigError(SleepKDError):
    """Invalid configuration: bad field values, inconsistent options."""


class DataError(SleepKDError):
    """Malformed or inconsistent input data (files, labels, alignment)."""


class ShapeError(SleepKDError):
    """Array shape mismatch between operands that must agree exactly."""


class NumericsError(SleepKDError):
    """Non-finite values or other numeric breakdown during computation."""
