"""
Conjugate-Gaussian testbed with an exact E-step.

    z_i ~ N(μ, τ²),    y_ij = z_i + ε_ij,    ε_ij ~ N(0, 1),

for units i = 1..n with m observations each; θ = (μ, τ²). The posterior of
each z_i is Gaussian, so s̄(θ), h(s), exact EM and the marginal likelihood
are all available in closed form.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from langevin_saem.model_core import LatentModel

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)


class ConjugateGaussianOracle(LatentModel):
    name = "conjugate-gaussian"
    param_names = ("mu", "tau2")
    chart_exponents = (0, 1)
    stat_dim = 2
    has_exact_posterior = True

    def __init__(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        self.y = y
        self.n_obs_units, self.m = y.shape
        self.ybar = y.mean(axis=1)
        self.ss = ((y - self.ybar[:, None]) ** 2).sum(axis=1)
        self.latent_dim = self.n_obs_units
        self.unit_index = np.arange(self.n_obs_units)

    @classmethod
    def generate(cls, n_units: int = 50, obs_per_unit: int = 1, mu: float = 1.0, tau2: float = 2.0,
                 seed: Optional[int] = 0) -> "ConjugateGaussianOracle":
        rng = np.random.default_rng(seed)
        z = mu + np.sqrt(tau2) * rng.standard_normal(n_units)
        y = z[:, None] + rng.standard_normal((n_units, obs_per_unit))
        return cls(y)

    def subset(self, units: Sequence[int]) -> "ConjugateGaussianOracle":
        return ConjugateGaussianOracle(self.y[np.asarray(units, dtype=int)])

    # -- densities -------------------------------------------------------

    def unit_log_prior(self, z, theta):
        mu, tau2 = theta
        return -0.5 * (z - mu) ** 2 / tau2 - 0.5 * (LOG_2PI + np.log(tau2))

    def log_prior(self, z, theta):
        return self.unit_log_prior(z, theta).sum(axis=-1)

    def grad_log_prior(self, z, theta):
        mu, tau2 = theta
        return -(z - mu) / tau2

    def unit_log_likelihood(self, z, theta):
        return -0.5 * (self.m * (z - self.ybar) ** 2 + self.ss) - 0.5 * self.m * LOG_2PI

    def log_likelihood(self, z, theta):
        return self.unit_log_likelihood(z, theta).sum(axis=-1)

    def grad_log_likelihood(self, z, theta):
        return self.m * (self.ybar - z)

    def sample_prior(self, theta, rng, size=None):
        mu, tau2 = theta
        shape = (self.latent_dim,) if size is None else (size, self.latent_dim)
        return mu + np.sqrt(tau2) * rng.standard_normal(shape)

    # -- exponential family ----------------------------------------------

    def suff_stats(self, z):
        z = np.asarray(z, dtype=float)
        return np.stack([z.mean(axis=-1), (z ** 2).mean(axis=-1)], axis=-1)

    def m_step(self, s):
        mu = s[0]
        return np.array([mu, max(s[1] - mu ** 2, VAR_FLOOR)])

    def is_clamped(self, s):
        return bool(s[1] - s[0] ** 2 < VAR_FLOOR)

    def stats_from_params(self, theta):
        mu, tau2 = theta
        return np.array([mu, tau2 + mu ** 2])

    def objective(self, s, theta):
        mu, tau2 = theta
        return float(-(s[1] - 2 * mu * s[0] + mu ** 2) / (2 * tau2) - 0.5 * np.log(tau2))

    # -- exact posterior -------------------------------------------------

    def posterior_moments(self, theta):
        mu, tau2 = theta
        var = 1.0 / (1.0 / tau2 + self.m)
        mean = var * (mu / tau2 + self.m * self.ybar)
        return mean, var

    def exact_posterior_mean_stats(self, theta):
        mean, var = self.posterior_moments(theta)
        return np.array([mean.mean(), (mean ** 2).mean() + var])

    def sample_posterior(self, theta, rng):
        mean, var = self.posterior_moments(theta)
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    def unit_marginal_log_density(self, theta) -> np.ndarray:
        """log p(y_i | θ) per unit."""
        mu, tau2 = theta
        c = 1.0 + self.m * tau2
        return -0.5 * (self.m * LOG_2PI + np.log(c) + self.ss + self.m * (self.ybar - mu) ** 2 / c)

    def marginal_log_likelihood(self, theta) -> float:
        return float(self.unit_marginal_log_density(theta).sum())

    def marginal_mle(self) -> np.ndarray:
        """Closed-form maximiser of l(θ): ybar_i ~ N(μ, τ² + 1/m)."""
        mu = self.ybar.mean()
        tau2 = max(self.ybar.var() - 1.0 / self.m, VAR_FLOOR)
        return np.array([mu, tau2])

    def lyapunov(self, s) -> float:
        """V(s) = −l(θ̂(s))."""
        return -self.marginal_log_likelihood(self.m_step(s))


def oracle_exact_em(model: ConjugateGaussianOracle, theta0: np.ndarray, n: int) -> np.ndarray:
    """Deterministic EM iterates θ_0, θ_1, ..., θ_n (s_k = s̄(θ_k), θ_{k+1} = θ̂(s_k))."""
    if n < 1:
        raise ValueError("n must be at least 1")
    thetas = [np.asarray(theta0, dtype=float)]
    for _ in range(n):
        thetas.append(model.m_step(model.exact_posterior_mean_stats(thetas[-1])))
    return np.array(thetas)


def exact_em_fixed_point(model: ConjugateGaussianOracle, theta0: Optional[np.ndarray] = None,
                         tol: float = 1e-13, max_iter: int = 100000) -> np.ndarray:
    """Iterate exact EM until successive θ agree to ``tol``; returns the fixed point s*."""
    theta = model.marginal_mle() if theta0 is None else np.asarray(theta0, dtype=float)
    for _ in range(max_iter):
        nxt = model.m_step(model.exact_posterior_mean_stats(theta))
        if np.max(np.abs(nxt - theta)) < tol:
            theta = nxt
            break
        theta = nxt
    return model.exact_posterior_mean_stats(theta)
