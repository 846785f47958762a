"""
Curved-exponential-family latent-variable models.

Every concrete model and the SAEM driver program against ``LatentModel``:
the sufficient-statistic map S(z), the unnormalised joint log-density split
into prior and likelihood, its gradient in z, and the closed-form M-step.
Observations are captured when the model is constructed.

All density and gradient methods broadcast over leading axes of ``z``
(shape ``(..., latent_dim)``), which lets AIS particles and per-unit chains
run vectorised.
"""
import abc
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from langevin_saem.errors import CapabilityError, DomainError, GradientCheckError, ParameterError

logger = logging.getLogger(__name__)

# Step used for central finite differences in gradient checks
FD_STEP = 1e-5


class LatentModel(abc.ABC):
    """Base class for models of the form h(y,z) exp(S(z)·φ(θ) − ψ(θ))."""

    name = "latent-model"
    # Parameter names, in the order of the Params vector
    param_names: Tuple[str, ...] = ()
    # Chart exponent per parameter: 0 = unconstrained, 1 = positive (log),
    # 2 = standard deviation (charted as log-variance)
    chart_exponents: Tuple[int, ...] = ()
    latent_dim: int = 0
    stat_dim: int = 0
    # Maps each latent coordinate to its unit when the posterior factorises
    unit_index: Optional[np.ndarray] = None
    has_exact_posterior = False

    def __repr__(self):
        return f"{type(self).__name__}(latent_dim={self.latent_dim}, stat_dim={self.stat_dim})"

    # -- densities -------------------------------------------------------

    @abc.abstractmethod
    def log_prior(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """log p(z | θ), summed over latent coordinates."""

    @abc.abstractmethod
    def grad_log_prior(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∇_z log p(z | θ)."""

    @abc.abstractmethod
    def log_likelihood(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """log p(y | z, θ) up to a z-independent constant."""

    @abc.abstractmethod
    def grad_log_likelihood(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∇_z log p(y | z, θ)."""

    @abc.abstractmethod
    def sample_prior(self, theta: np.ndarray, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw z from p(z | θ); ``size`` adds a leading particle axis."""

    def log_joint(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return self.log_prior(z, theta) + self.log_likelihood(z, theta)

    def grad_z_log_joint(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return self.grad_log_prior(z, theta) + self.grad_log_likelihood(z, theta)

    def posterior_target(self, theta: np.ndarray, per_unit: bool = False) -> Tuple[Callable, Callable]:
        """Log-density and force of p(z | y, θ) for the MCMC kernels.

        With ``per_unit`` the log-density returns one term per unit, as the
        blockwise Metropolis correction expects.
        """
        if per_unit:
            def log_density(z):
                return self.unit_log_prior(z, theta) + self.unit_log_likelihood(z, theta)
        else:
            def log_density(z):
                return self.log_joint(z, theta)

        def force(z):
            return self.grad_z_log_joint(z, theta)

        return log_density, force

    # -- unit structure --------------------------------------------------

    @property
    def n_units(self) -> int:
        if self.unit_index is None:
            return 1
        return int(self.unit_index.max()) + 1

    def unit_log_prior(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Per-unit prior terms, shape (..., n_units)."""
        return np.asarray(self.log_prior(z, theta))[..., None]

    def unit_log_likelihood(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Per-unit likelihood terms, shape (..., n_units)."""
        return np.asarray(self.log_likelihood(z, theta))[..., None]

    def pointwise_log_likelihood(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """log p(y_i | z, θ) per observation, shape (..., n_obs)."""
        raise CapabilityError(f"{self.name} has no pointwise likelihood")

    # -- exponential-family structure -----------------------------------

    @abc.abstractmethod
    def suff_stats(self, z: np.ndarray) -> np.ndarray:
        """S(z) with the observations baked in."""

    @abc.abstractmethod
    def m_step(self, s: np.ndarray) -> np.ndarray:
        """θ̂(s), the maximiser of L(s, θ)."""

    @abc.abstractmethod
    def stats_from_params(self, theta: np.ndarray) -> np.ndarray:
        """A statistic s with m_step(s) = θ."""

    @abc.abstractmethod
    def objective(self, s: np.ndarray, theta: np.ndarray) -> float:
        """L(s, θ) = s·φ(θ) − ψ(θ)."""

    def is_clamped(self, s: np.ndarray) -> bool:
        """True when m_step(s) had to floor a degenerate moment."""
        return False

    def exact_posterior_mean_stats(self, theta: np.ndarray) -> np.ndarray:
        """s̄(θ) = E[S(z) | y, θ]; only tractable models implement it."""
        raise CapabilityError(f"{self.name} has no exact posterior")

    def sample_posterior(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise CapabilityError(f"{self.name} has no exact posterior sampler")

    def preconditioner(self, theta: np.ndarray) -> Optional[np.ndarray]:
        """Diagonal preconditioner refreshed from θ, or None."""
        return None

    # -- parameters ------------------------------------------------------

    def initial_latent(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.latent_dim)

    def chart(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        u = theta.copy()
        for i, e in enumerate(self.chart_exponents):
            if e:
                u[i] = e * np.log(theta[i])
        return u

    def unchart(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        theta = u.copy()
        for i, e in enumerate(self.chart_exponents):
            if e:
                theta[i] = np.exp(u[i] / e)
        return theta

    def check_params(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        for i, value in enumerate(theta):
            name = self.param_names[i] if i < len(self.param_names) else f"theta[{i}]"
            positive = i < len(self.chart_exponents) and self.chart_exponents[i] > 0
            if not np.isfinite(value) or (positive and value <= 0):
                raise ParameterError(name, float(value))
        return theta


@dataclass
class GradientReport:
    """Outcome of a finite-difference gradient check."""
    max_relative_error: float
    max_absolute_error: float
    worst_coordinate: int
    analytic: np.ndarray
    numeric: np.ndarray

    def ok(self, tol: float = 1e-5) -> bool:
        # Coordinates whose gradient is near zero are judged on absolute error
        err = np.abs(self.analytic - self.numeric)
        return bool(np.all(err <= tol * np.maximum(np.abs(self.analytic), 1.0)))


def check_gradient_fn(log_density: Callable, grad: Callable, z: np.ndarray, h: float = FD_STEP) -> GradientReport:
    """Compare ``grad`` against central differences of ``log_density`` at z."""
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("gradient check point is not finite")
    analytic = np.asarray(grad(z), dtype=float)
    numeric = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        up = float(log_density(z + e))
        down = float(log_density(z - e))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise GradientCheckError(i, "log density is not finite at z ± h·e_i")
        numeric[i] = (up - down) / (2 * h)
    abs_err = np.abs(analytic - numeric)
    rel_err = abs_err / (np.abs(analytic) + 1e-12)
    worst = int(np.argmax(rel_err)) if rel_err.size else 0
    return GradientReport(
        max_relative_error=float(rel_err.max()) if rel_err.size else 0.0,
        max_absolute_error=float(abs_err.max()) if abs_err.size else 0.0,
        worst_coordinate=worst,
        analytic=analytic,
        numeric=numeric,
    )


def check_gradient(model: LatentModel, z: np.ndarray, theta: np.ndarray, h: float = FD_STEP) -> GradientReport:
    """Validate the Langevin force ∇_z log p(y, z | θ) a model supplies."""
    theta = np.asarray(theta, dtype=float)
    return check_gradient_fn(
        lambda x: model.log_joint(x, theta),
        lambda x: model.grad_z_log_joint(x, theta),
        z,
        h,
    )


def mean_field_residual(model: LatentModel, s: np.ndarray) -> np.ndarray:
    """h(s) = s̄(θ̂(s)) − s; zero exactly at EM fixed points."""
    if not model.has_exact_posterior:
        raise CapabilityError(f"{model.name} has no exact posterior; h(s) is not computable")
    s = np.asarray(s, dtype=float)
    return model.exact_posterior_mean_stats(model.m_step(s)) - s


def perturbed_objectives(model: LatentModel, s: np.ndarray, rng: np.random.Generator,
                         n_draws: int = 100, radius: float = 0.5) -> Tuple[float, np.ndarray]:
    """L(s, θ̂(s)) and L(s, θ) for θ drawn uniformly in a chart-ball around θ̂(s)."""
    theta_hat = model.m_step(s)
    best = model.objective(s, theta_hat)
    u = model.chart(theta_hat)
    others = np.empty(n_draws)
    for k in range(n_draws):
        delta = rng.uniform(-radius, radius, size=u.shape)
        others[k] = model.objective(s, model.unchart(u + delta))
    return best, others


def as_stats(values: Sequence[float], model: LatentModel) -> np.ndarray:
    s = np.asarray(values, dtype=float)
    if s.shape != (model.stat_dim,):
        raise DomainError(f"expected {model.stat_dim} sufficient statistics, got shape {s.shape}")
    return s
