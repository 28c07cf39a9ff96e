"""Exception hierarchy shared across the package."""


class CIFMError(Exception):
    """Base class for all package errors."""


class ConfigError(CIFMError, ValueError):
    pass


class UsageError(CIFMError, ValueError):
    pass


class DataError(CIFMError, ValueError):
    pass


class InvalidBatchError(DataError):
    pass


class DomainError(CIFMError, ValueError):
    pass


class NumericError(CIFMError, FloatingPointError):
    pass


class UndefinedCorrelationError(CIFMError, ValueError):
    pass


class ConsistencyError(CIFMError, RuntimeError):
    """Internal invariant violated (weight restoration, frozen checksums)."""
