"""Exception types shared across the package."""


class ModelStructureError(ValueError):
    """Raised when system matrices are dimensionally inconsistent."""


class ParameterError(ValueError):
    """Raised for out-of-range or infeasible algorithm parameters."""


class DetectabilityError(RuntimeError):
    """Raised when the Riccati iteration fails to converge, which
    operationally signals a detectability violation."""


class NumericalError(RuntimeError):
    """Raised when a linear-algebra step fails or an internal
    consistency check is violated."""


class UsageError(RuntimeError):
    """Raised when the streaming predict/observe contract is violated."""


class ConfigError(ValueError):
    """Raised for malformed experiment configuration input."""
