"""
Held-out evaluation of fitted models.

* ``ais_marginal_lpd`` - annealed importance sampling along the geometric
  prior → posterior path, one estimate per unit.
* ``posterior_sample_lpd`` - log-predictive density averaged over tuned
  MALA posterior draws.
* ``bootstrap_ci`` - percentile bootstrap interval of the mean.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp

from langevin_saem.errors import ConfigError, DomainError, EstimationError
from langevin_saem.mcmc import AdaptationConfig, KernelConfig, init_state, kernel_step, run_chain
from langevin_saem.model_core import LatentModel

logger = logging.getLogger(__name__)

CI_LEVEL = 0.8


@dataclass
class AisConfig:
    n_weights: int = 100
    n_annealing_steps: int = 1000
    transitions_per_temperature: int = 1
    kernel: KernelConfig = field(default_factory=lambda: KernelConfig(eta=0.01, adjusted=True))

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelConfig.from_dict(self.kernel)
        if self.n_weights < 1:
            raise ConfigError("ais.n_weights", "must be at least 1")
        if self.n_annealing_steps < 1:
            raise ConfigError("ais.n_annealing_steps", "must be at least 1")
        if self.transitions_per_temperature < 0:
            raise ConfigError("ais.transitions_per_temperature", "must be non-negative")
        if self.kernel.adaptation is not None:
            raise ConfigError("ais.kernel.adaptation", "the AIS kernel uses a fixed stepsize")

    def to_dict(self) -> dict:
        return {
            "n_weights": self.n_weights,
            "n_annealing_steps": self.n_annealing_steps,
            "transitions_per_temperature": self.transitions_per_temperature,
            "kernel": self.kernel.to_dict(),
        }


@dataclass
class PosteriorLpdConfig:
    n_samples: int = 2000
    adaptation_steps: int = 2000
    initial_eta: float = 0.01
    target_accept: float = 0.57

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("posterior_lpd.n_samples", "must be at least 1")
        if self.adaptation_steps < 0:
            raise ConfigError("posterior_lpd.adaptation_steps", "must be non-negative")

    def kernel(self) -> KernelConfig:
        adaptation = AdaptationConfig(target_accept=self.target_accept, adaptation_steps=self.adaptation_steps)
        return KernelConfig(eta=self.initial_eta, adjusted=True, adaptation=adaptation)

    def to_dict(self) -> dict:
        return asdict(self)


def quadratic_schedule(n_steps: int) -> np.ndarray:
    """t_j = (j/J)², j = 0..J."""
    if n_steps < 1:
        raise DomainError("annealing schedule needs at least one step")
    j = np.arange(n_steps + 1)
    t = (j / n_steps) ** 2
    t[-1] = 1.0
    return t


def _units(model: LatentModel) -> np.ndarray:
    if model.unit_index is None:
        return np.zeros(model.latent_dim, dtype=int)
    return np.asarray(model.unit_index, dtype=int)


def ais_marginal_lpd(model: LatentModel, theta: np.ndarray, cfg: AisConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """log p(y_u | θ) estimates for every unit u of ``model``.

    Particles start from the prior. Before the move at temperature t_j each
    particle collects (t_j − t_{j−1}) times its per-unit log-likelihood, then
    the blockwise kernel targets prior · likelihood^{t_j}.
    """
    theta = np.asarray(theta, dtype=float)
    blocks = _units(model)
    n_units = int(blocks.max()) + 1
    kernel = cfg.kernel
    p = model.preconditioner(theta)
    if p is not None:
        kernel = kernel.with_preconditioner(p)
    schedule = quadratic_schedule(cfg.n_annealing_steps)

    z = model.sample_prior(theta, rng, size=cfg.n_weights)
    log_w = np.zeros((cfg.n_weights, n_units))
    state = init_state(z, kernel)
    for j in range(1, len(schedule)):
        t_prev, t = schedule[j - 1], schedule[j]
        log_w += (t - t_prev) * model.unit_log_likelihood(state.position, theta)
        if j == len(schedule) - 1:
            break

        def log_density(x, t=t):
            return model.unit_log_prior(x, theta) + t * model.unit_log_likelihood(x, theta)

        def force(x, t=t):
            return model.grad_log_prior(x, theta) + t * model.grad_log_likelihood(x, theta)

        for _ in range(cfg.transitions_per_temperature):
            kernel_step(state, log_density, force, kernel, rng, blocks=blocks if kernel.adjusted else None)

    if np.any(np.all(np.isneginf(log_w), axis=0)) or np.any(np.isnan(log_w)):
        raise EstimationError("every importance weight vanished for at least one unit")
    lpd = logsumexp(log_w, axis=0) - np.log(cfg.n_weights)
    logger.debug(f"AIS finished: {n_units} units, acceptance {state.acceptance_rate:.3f}")
    return lpd


def lpd_from_draws(pointwise_loglik: np.ndarray) -> np.ndarray:
    """LPD_i = log mean_s p(y_i | z⁽ˢ⁾) from a (n_draws, n_points) array."""
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] == 0:
        raise DomainError("expected a non-empty (n_draws, n_points) log-likelihood array")
    return logsumexp(ll, axis=0) - np.log(ll.shape[0])


def sample_posterior_mala(model: LatentModel, theta: np.ndarray, cfg: PosteriorLpdConfig,
                          rng: np.random.Generator, z0: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior draws from dual-averaging MALA after its adaptation window."""
    theta = np.asarray(theta, dtype=float)
    kernel = cfg.kernel()
    p = model.preconditioner(theta)
    if p is not None:
        kernel = kernel.with_preconditioner(p)
    log_density, force = model.posterior_target(theta)
    start = model.initial_latent(rng) if z0 is None else z0
    state, _ = run_chain(start, cfg.adaptation_steps, log_density, force, kernel, rng)
    state.reset_counters()
    state, draws = run_chain(state, cfg.n_samples, log_density, force, kernel, rng, keep_trace=True)
    logger.info(f"posterior sampling: eta={state.eta:.3g}, acceptance {state.acceptance_rate:.3f}")
    return draws


def posterior_sample_lpd(model: LatentModel, theta: np.ndarray, test_model: LatentModel,
                         cfg: PosteriorLpdConfig, rng: np.random.Generator,
                         z0: Optional[np.ndarray] = None) -> "LpdResult":
    """Held-out LPD of ``test_model``'s observations under posterior draws of ``model``.

    Both models must share the latent layout (global coefficients).
    Divergence of the sampler propagates as DivergenceError.
    """
    if test_model.latent_dim != model.latent_dim:
        raise DomainError("training and test models disagree on the latent dimension")
    draws = sample_posterior_mala(model, theta, cfg, rng, z0)
    lpd = lpd_from_draws(test_model.pointwise_log_likelihood(draws, theta))
    return LpdResult.from_values(lpd, rng=rng)


def bootstrap_ci(values: Sequence[float], level: float = CI_LEVEL, n_resamples: int = 2000,
                 rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("bootstrap needs at least one value")
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0, 1), got {level}")
    if v.size == 1 or np.all(v == v[0]):
        return float(v[0]), float(v[0])
    res = stats.bootstrap((v,), np.mean, confidence_level=level, n_resamples=n_resamples,
                          method="percentile", vectorized=True, random_state=rng)
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


@dataclass
class LpdResult:
    lpd: np.ndarray
    mean: float
    ci_lower: float
    ci_upper: float
    unit_ids: Optional[Sequence] = None

    @classmethod
    def from_values(cls, lpd: Sequence[float], unit_ids: Optional[Sequence] = None, level: float = CI_LEVEL,
                    rng: Optional[np.random.Generator] = None) -> "LpdResult":
        lpd = np.asarray(lpd, dtype=float)
        lower, upper = bootstrap_ci(lpd, level=level, rng=rng)
        return cls(lpd=lpd, mean=float(lpd.mean()), ci_lower=lower, ci_upper=upper, unit_ids=unit_ids)

    @property
    def n_units(self) -> int:
        return int(self.lpd.size)

    def summary(self) -> dict:
        return {"mean": self.mean, "ci_lower": self.ci_lower, "ci_upper": self.ci_upper, "n_units": self.n_units}

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ids = list(self.unit_ids) if self.unit_ids is not None else list(range(self.n_units))
        pd.DataFrame({"unit_id": ids, "lpd": self.lpd}).to_csv(path, index=False)
        return path

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2))
        return path
