"""Exception hierarchy.

The CLI prints ``<ClassName>: <message>`` on a single line for any of these,
so class names double as machine-readable error codes.
"""


class DDModemError(Exception):
    """Base class for all package errors."""


class ConfigError(DDModemError, ValueError):
    pass


class DimensionError(DDModemError, ValueError):
    pass


class DegenerateInputError(DDModemError, ValueError):
    pass


class FormatError(DDModemError, ValueError):
    """Corrupt, truncated or foreign binary file."""


class ArchMismatchError(DDModemError, ValueError):
    pass


class NonFiniteLossError(DDModemError, FloatingPointError):
    pass


class HashMismatchError(DDModemError):
    pass


class MissingInputError(DDModemError):
    pass
