"""
Logistic regression with automatic relevance determination.

    β_j ~ N(0, 1/γ_j),  β₀ ~ N(0, 10),  y_i ~ Bernoulli(logistic(βᵀx_i + β₀))

The latent is z = (β_1..β_d, β₀) with the intercept last; θ = γ.
Irrelevant features are pruned as γ_j grows without bound.
"""
import logging

import numpy as np

from langevin_saem.errors import DomainError
from langevin_saem.model_core import LatentModel
from langevin_saem.models.logistic import grad_logistic_loglik, pointwise_logistic_loglik

logger = logging.getLogger(__name__)

MOMENT_FLOOR = 1e-8
INTERCEPT_VARIANCE = 10.0
PRECONDITIONER_DELTA = 2e-16
LOG_2PI = np.log(2 * np.pi)


def m_step_ard(s: np.ndarray, floor: float = MOMENT_FLOOR) -> np.ndarray:
    """γ̂_j = 1 / max(E[β_j²], floor)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("second moments must be non-negative")
    return 1.0 / np.maximum(s, floor)


def ard_preconditioner(gamma: np.ndarray, delta: float = PRECONDITIONER_DELTA) -> np.ndarray:
    """P_jj = 1/(γ_j² + 0.01) + δ over β, then 1 for the intercept."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise DomainError("precisions must be positive")
    return np.append(1.0 / (gamma ** 2 + 0.01) + delta, 1.0)


class ArdLogisticModel(LatentModel):
    name = "ard-logistic"

    def __init__(self, X: np.ndarray, y: np.ndarray, delta: float = PRECONDITIONER_DELTA):
        X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if X.shape[0] != self.y.shape[0]:
            raise DomainError("design matrix and responses disagree on the number of rows")
        self.X = X
        self.n_features = X.shape[1]
        self.design = np.hstack([X, np.ones((X.shape[0], 1))])
        self.latent_dim = self.n_features + 1
        self.stat_dim = self.n_features
        self.param_names = tuple(f"gamma_{j}" for j in range(1, self.n_features + 1))
        self.chart_exponents = (1,) * self.n_features
        self.delta = delta

    @classmethod
    def from_dataset(cls, dataset) -> "ArdLogisticModel":
        return cls(dataset.X, dataset.y)

    def log_prior(self, z, theta):
        gamma = np.asarray(theta, dtype=float)
        beta, b0 = z[..., :-1], z[..., -1]
        coef = (-0.5 * gamma * beta ** 2).sum(axis=-1) + 0.5 * np.log(gamma).sum()
        icpt = -0.5 * b0 ** 2 / INTERCEPT_VARIANCE - 0.5 * np.log(INTERCEPT_VARIANCE)
        return coef + icpt - 0.5 * self.latent_dim * LOG_2PI

    def grad_log_prior(self, z, theta):
        gamma = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        scale = np.append(gamma, 1.0 / INTERCEPT_VARIANCE)
        return -scale * z

    def log_likelihood(self, z, theta):
        return self.pointwise_log_likelihood(z, theta).sum(axis=-1)

    def pointwise_log_likelihood(self, z, theta):
        return pointwise_logistic_loglik(z, self.design, self.y)

    def grad_log_likelihood(self, z, theta):
        return grad_logistic_loglik(z, self.design, self.y)

    def sample_prior(self, theta, rng, size=None):
        sd = np.append(1.0 / np.sqrt(np.asarray(theta, dtype=float)), np.sqrt(INTERCEPT_VARIANCE))
        shape = (self.latent_dim,) if size is None else (size, self.latent_dim)
        return sd * rng.standard_normal(shape)

    def suff_stats(self, z):
        # Single-draw second moments, no Rao-Blackwellization
        return np.asarray(z, dtype=float)[..., :-1] ** 2

    def m_step(self, s):
        return m_step_ard(s)

    def is_clamped(self, s):
        return bool(np.any(np.asarray(s) < MOMENT_FLOOR))

    def stats_from_params(self, theta):
        return 1.0 / np.asarray(theta, dtype=float)

    def objective(self, s, theta):
        gamma = np.asarray(theta, dtype=float)
        return float(0.5 * (np.log(gamma) - gamma * np.asarray(s)).sum())

    def preconditioner(self, theta):
        return ard_preconditioner(theta, self.delta)
