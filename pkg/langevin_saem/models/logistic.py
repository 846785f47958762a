"""
Logistic regression with an exchangeable Gaussian prior on the coefficients.

    β ~ N(μ 1_d, σ² I_d),    y_i ~ Bernoulli(logistic(βᵀx_i)),

with hyperparameters θ = (μ, σ) and sufficient statistics
S(β) = (Σ_j β_j, Σ_j β_j²).
"""
import logging

import numpy as np
from scipy.special import expit, log_expit

from langevin_saem.errors import DomainError
from langevin_saem.model_core import LatentModel

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)


def logistic_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Σ_i y_i log p_i + (1 − y_i) log(1 − p_i) in the log1p-exp stable form.

    ``beta`` may carry leading batch axes.
    """
    return pointwise_logistic_loglik(beta, X, y).sum(axis=-1)


def pointwise_logistic_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    if beta.shape[-1] != X.shape[1]:
        raise DomainError(f"coefficient dimension {beta.shape[-1]} does not match design width {X.shape[1]}")
    eta = beta @ X.T
    # log p = log_expit(η), log(1 − p) = log_expit(−η)
    return y * log_expit(eta) + (1.0 - y) * log_expit(-eta)


def grad_logistic_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    eta = np.asarray(beta, dtype=float) @ X.T
    return (y - expit(eta)) @ X


def m_step_logistic_gaussian(s: np.ndarray, d: int):
    """(μ̂, σ̂) from S = (Σβ, Σβ²); the variance is floored at 1e-8.

    Returns the parameters and whether the floor was hit.
    """
    mu = s[0] / d
    var = s[1] / d - mu ** 2
    clamped = bool(var < VAR_FLOOR)
    return np.array([mu, np.sqrt(max(var, VAR_FLOOR))]), clamped


class LogisticGaussianModel(LatentModel):
    name = "logistic-gaussian"
    param_names = ("mu", "sigma")
    chart_exponents = (0, 2)
    stat_dim = 2

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise DomainError("design matrix and responses disagree on the number of rows")
        self.latent_dim = self.X.shape[1]

    @classmethod
    def from_dataset(cls, dataset) -> "LogisticGaussianModel":
        return cls(dataset.X, dataset.y)

    def log_prior(self, z, theta):
        mu, sigma = theta
        return (-0.5 * ((z - mu) / sigma) ** 2).sum(axis=-1) - self.latent_dim * (np.log(sigma) + 0.5 * LOG_2PI)

    def grad_log_prior(self, z, theta):
        mu, sigma = theta
        return -(z - mu) / sigma ** 2

    def log_likelihood(self, z, theta):
        return logistic_loglik(z, self.X, self.y)

    def grad_log_likelihood(self, z, theta):
        return grad_logistic_loglik(z, self.X, self.y)

    def pointwise_log_likelihood(self, z, theta):
        return pointwise_logistic_loglik(z, self.X, self.y)

    def sample_prior(self, theta, rng, size=None):
        mu, sigma = theta
        shape = (self.latent_dim,) if size is None else (size, self.latent_dim)
        return mu + sigma * rng.standard_normal(shape)

    def suff_stats(self, z):
        z = np.asarray(z, dtype=float)
        return np.stack([z.sum(axis=-1), (z ** 2).sum(axis=-1)], axis=-1)

    def m_step(self, s):
        theta, _ = m_step_logistic_gaussian(s, self.latent_dim)
        return theta

    def is_clamped(self, s):
        return m_step_logistic_gaussian(s, self.latent_dim)[1]

    def stats_from_params(self, theta):
        mu, sigma = theta
        d = self.latent_dim
        return np.array([d * mu, d * (sigma ** 2 + mu ** 2)])

    def objective(self, s, theta):
        mu, sigma = theta
        d = self.latent_dim
        return float(-(s[1] - 2 * mu * s[0] + d * mu ** 2) / (2 * sigma ** 2) - d * np.log(sigma))
