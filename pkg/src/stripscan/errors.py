"""Exception types shared across the package."""


class StripscanError(Exception):
    """Base class for all package errors."""


class ConfigError(StripscanError):
    """Malformed or inconsistent scenario configuration."""


class ValidationError(StripscanError):
    """Invalid numeric inputs (non-finite values, off-sphere points, ...)."""


class DegenerateGeometryError(StripscanError):
    """Geometry without a well-defined answer (antipodal endpoints, zero
    line of sight, vanishing reference vector, ...)."""


class SingularConfigurationError(StripscanError):
    """Attitude chain singularity (reference vector parallel to boresight)."""


class ImpactError(StripscanError):
    """Propagated orbit reached or crossed the Earth surface."""


class DivergenceError(StripscanError):
    """A state rollout produced non-finite values."""


class SweepFailureError(StripscanError):
    """Backward sweep could not keep the control Hessian positive definite."""
