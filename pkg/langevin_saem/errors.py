"""
Exceptions raised by the SAEM library.

Library code raises these; the command-line runner maps them to exit codes.
"""
from typing import Optional


class SaemError(Exception):
    """Base class for every error raised by langevin_saem."""


class ConfigError(SaemError):
    """Invalid experiment or kernel configuration."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class DataError(SaemError):
    """Unreadable or malformed dataset."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        if row is not None or column is not None:
            message = f"{message} (row={row}, column={column})"
        super().__init__(message)


class DomainError(SaemError, ValueError):
    """Argument outside the domain of a numerical routine."""


class CapabilityError(SaemError):
    """The model does not provide an optional capability."""


class ParameterError(SaemError):
    """An M-step produced a parameter outside the model's parameter space."""

    def __init__(self, name: str, value: float):
        self.name = name
        self.value = value
        super().__init__(f"parameter {name} left the parameter space (value={value!r})")


class GradientCheckError(SaemError):
    """Finite-difference evaluation failed at a coordinate."""

    def __init__(self, coordinate: int, reason: str):
        self.coordinate = coordinate
        super().__init__(f"coordinate {coordinate}: {reason}")


class DivergenceError(SaemError):
    """A Markov chain or stochastic-approximation iterate left the finite region."""

    def __init__(self, step: int, eta: Optional[float] = None, message: str = "chain diverged"):
        self.step = step
        self.eta = eta
        detail = f"{message} at step {step}"
        if eta is not None:
            detail += f" (eta={eta:g})"
        super().__init__(detail)


class EstimationError(SaemError):
    """An estimator could not produce a finite value."""
