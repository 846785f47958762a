"""
Poisson log-normal count regression.

    η_i ~ N(βᵀx_i + β₀, σ²),    y_i ~ Poisson(exp(η_i))

One latent per observation; θ = (β_1..β_d, β₀, σ). σ is a standard deviation.
"""
import logging

import numpy as np
from scipy.special import gammaln

from langevin_saem.errors import DomainError
from langevin_saem.model_core import LatentModel

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)
# exp(η) overflows past this
ETA_LIMIT = 700.0


class PoissonLogNormalModel(LatentModel):
    name = "poisson-lognormal"

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise DomainError("design matrix and counts disagree on the number of rows")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise DomainError("counts must be non-negative integers")
        n, d = self.X.shape
        self.n_features = d
        self.latent_dim = n
        self.unit_index = np.arange(n)
        self.param_names = tuple(f"beta_{j}" for j in range(1, d + 1)) + ("beta_0", "sigma")
        self.chart_exponents = (0,) * (d + 1) + (2,)
        # S = (X̃ᵀη, Ση²) with X̃ = [X, 1]
        self.stat_dim = d + 2
        self.design = np.hstack([self.X, np.ones((n, 1))])
        self._gram = self.design.T @ self.design
        self._log_fact = gammaln(self.y + 1.0)

    @classmethod
    def from_dataset(cls, dataset) -> "PoissonLogNormalModel":
        return cls(dataset.X, dataset.y)

    def _mean(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.design @ theta[:-1], theta[-1]

    def unit_log_prior(self, z, theta):
        m, sigma = self._mean(theta)
        return -0.5 * ((z - m) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI

    def log_prior(self, z, theta):
        return self.unit_log_prior(z, theta).sum(axis=-1)

    def grad_log_prior(self, z, theta):
        m, sigma = self._mean(theta)
        return -(z - m) / sigma ** 2

    def unit_log_likelihood(self, z, theta):
        z = np.asarray(z, dtype=float)
        with np.errstate(over="ignore"):
            return self.y * z - np.exp(np.minimum(z, ETA_LIMIT)) - self._log_fact

    def pointwise_log_likelihood(self, z, theta):
        return self.unit_log_likelihood(z, theta)

    def log_likelihood(self, z, theta):
        return self.unit_log_likelihood(z, theta).sum(axis=-1)

    def grad_log_likelihood(self, z, theta):
        z = np.asarray(z, dtype=float)
        return self.y - np.exp(np.minimum(z, ETA_LIMIT))

    def sample_prior(self, theta, rng, size=None):
        m, sigma = self._mean(theta)
        shape = m.shape if size is None else (size,) + m.shape
        return m + sigma * rng.standard_normal(shape)

    def initial_latent(self, rng):
        # log(y + 1/2) is a finite proxy for the log-rate
        return np.log(self.y + 0.5)

    def suff_stats(self, z):
        z = np.asarray(z, dtype=float)
        return np.concatenate([z @ self.design, (z ** 2).sum(axis=-1)[..., None]], axis=-1)

    def _solve(self, s):
        s = np.asarray(s, dtype=float)
        coef = np.linalg.solve(self._gram, s[:-1])
        # RSS = Ση² − 2 coefᵀX̃ᵀη + coefᵀX̃ᵀX̃ coef, which is Ση² − coefᵀX̃ᵀη at the OLS solution
        rss = s[-1] - coef @ s[:-1]
        return coef, rss / self.latent_dim

    def m_step(self, s):
        coef, var = self._solve(s)
        return np.concatenate([coef, [np.sqrt(max(var, VAR_FLOOR))]])

    def is_clamped(self, s):
        return bool(self._solve(s)[1] < VAR_FLOOR)

    def stats_from_params(self, theta):
        m, sigma = self._mean(theta)
        return np.concatenate([m @ self.design, [(m ** 2).sum() + self.latent_dim * sigma ** 2]])

    def objective(self, s, theta):
        theta = np.asarray(theta, dtype=float)
        coef, sigma = theta[:-1], theta[-1]
        quad = s[-1] - 2 * coef @ s[:-1] + coef @ self._gram @ coef
        return float(-quad / (2 * sigma ** 2) - self.latent_dim * np.log(sigma))
