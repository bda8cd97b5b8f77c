"""Exception hierarchy shared by the library and the CLI."""


class MagmapError(Exception):
    """Base class for all library errors."""


class ConfigError(MagmapError, ValueError):
    """Invalid configuration or argument values."""


class DataError(MagmapError, ValueError):
    """Malformed or non-finite input data."""


class DomainError(DataError):
    """A position lies outside the interpolable interior of an inducing grid."""


class CapacityError(MagmapError):
    """A dense computation would exceed the configured size cap."""


class NumericalError(MagmapError, ArithmeticError):
    """Factorization failure, solver breakdown or non-finite iterates."""
