"""Exception hierarchy shared by every rednet module."""


class RedNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RedNetError, ValueError):
    """Shapes or extents are incompatible with an operation."""


class NumericError(RedNetError, ArithmeticError):
    """A NaN or infinity appeared, or a quantity is mathematically undefined."""


class UsageError(RedNetError, ValueError):
    """An API was called outside its contract (e.g. non-scalar loss)."""


class ConfigError(RedNetError, ValueError):
    pass


class DataError(RedNetError, ValueError):
    """Malformed image/mask/manifest input. Messages carry the file path."""


class CheckpointError(RedNetError, ValueError):
    pass


class MetricError(RedNetError, ValueError):
    pass
