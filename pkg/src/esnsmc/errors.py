"""Exception hierarchy shared across the package."""


class EsnError(Exception):
    """Base class for all package-specific errors."""


class ParameterDomainError(EsnError, ValueError):
    """Parameter values outside the distribution's domain (e.g. non-SPD scale)."""


class UnsupportedDimensionError(EsnError, ValueError):
    """Operation not available for the requested dimension."""


class DataError(EsnError, ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(EsnError, ValueError):
    """Invalid run configuration."""


class NumericalError(EsnError, RuntimeError):
    """A numerical routine failed to reach its accuracy or termination target."""


class InitializationError(NumericalError):
    """Construction of the initial sampling distribution failed."""


class DegenerateSystemError(NumericalError):
    """Particle system collapsed (all weights numerically zero)."""
