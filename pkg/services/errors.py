"""Exception hierarchy shared by every service module.

Validation failures are user-correctable (bad inputs, violated assumptions);
solver failures mean the numerics could not deliver a trustworthy answer.
The CLI maps the two families to exit codes 1 and 2.
"""
from typing import Optional


class AlgaeError(Exception):
    """Base class for all library errors."""


class ValidationError(AlgaeError, ValueError):
    """An input violates a type invariant or a documented precondition."""


class SupportError(ValidationError):
    """d^pi puts mass where d^D has none (bounded density ratio violated)."""

    def __init__(self, message: str, pair: Optional[tuple] = None):
        super().__init__(message)
        self.pair = pair


class ErgodicityError(ValidationError):
    """The chain induced by a policy has more than one recurrent class."""


class ConfigurationError(ValidationError):
    """A configuration value is missing, unknown or inconsistent."""


class SolverError(AlgaeError, RuntimeError):
    """A numerical routine failed to produce a verified solution."""


class SingularSystemError(SolverError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class ConditioningError(SolverError):
    def __init__(self, message: str, min_eigenvalue: float = float("nan")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConvergenceError(SolverError):
    def __init__(self, message: str, grad_norm: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations
