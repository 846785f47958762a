"""
Bias and convergence instrumentation for SAEM runs.

The conjugate-Gaussian oracle makes the mean field h(s) computable, so the
stationary level of |h(s_k)|² can be measured for each Langevin stepsize.
The Gaussian ULA recursion gives a closed-form bias to compare against.
"""
import logging
import multiprocessing
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from langevin_saem.errors import ConfigError, DomainError
from langevin_saem.saem import ExactPosteriorTransition, SaemConfig, Trace, run_saem

logger = logging.getLogger(__name__)

PLATEAU_WINDOW = 0.1


class GaussianBias(NamedTuple):
    empirical: float
    analytic: float
    standard_error: float

    @property
    def z_score(self) -> float:
        return (self.empirical - self.analytic) / self.standard_error


def ula_stationary_variance(sigma2: float, eta: float) -> float:
    """Fixed point of v = (1 − η/σ²)² v + 2η."""
    if not sigma2 > 0 or not eta > 0:
        raise DomainError("variance and stepsize must be positive")
    if eta >= 2 * sigma2:
        raise DomainError(f"ULA on N(0, {sigma2:g}) is unstable for eta={eta:g} >= 2σ²")
    return sigma2 / (1.0 - eta / (2.0 * sigma2))


def ula_gaussian_bias(sigma2: float, eta: float, n_steps: int, rng: np.random.Generator) -> GaussianBias:
    """Empirical and analytic stationary variance of ULA on N(0, σ²).

    The chain x' = (1 − η/σ²) x + √(2η) ξ is an AR(1) recursion; it starts
    in its stationary law so no burn-in is discarded.
    """
    analytic = ula_stationary_variance(sigma2, eta)
    if n_steps < 2:
        raise DomainError("need at least two steps")
    rho = 1.0 - eta / sigma2
    x0 = np.sqrt(analytic) * rng.standard_normal()
    noise = np.sqrt(2.0 * eta) * rng.standard_normal(n_steps)
    x, _ = lfilter([1.0], [1.0, -rho], noise, zi=[rho * x0])
    empirical = float(np.mean(x ** 2))
    # Variance of the mean of x² for a Gaussian AR(1) chain
    se = float(np.sqrt(2.0 * analytic ** 2 * (1.0 + rho ** 2) / ((1.0 - rho ** 2) * n_steps)))
    return GaussianBias(empirical, analytic, se)


def plateau(values: Sequence[float], window: float = PLATEAU_WINDOW) -> float:
    """Mean over the final ``window`` fraction of a sequence."""
    if not 0.0 < window <= 0.5:
        raise ConfigError("window", f"must lie in (0, 0.5], got {window}")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("cannot take the plateau of an empty sequence")
    n = max(1, int(np.ceil(window * v.size)))
    return float(np.mean(v[-n:]))


def residual_plateau(trace: Trace, window: float = PLATEAU_WINDOW) -> float:
    """Plateau of |h(s_k)|²; +inf for a diverged run."""
    if trace.diverged:
        return float("inf")
    h = trace.h_norms()
    if h.size == 0 or np.all(np.isnan(h)):
        raise DomainError("trace has no mean-field residuals; the model needs an exact posterior")
    return plateau(h ** 2, window)


@dataclass
class BiasReport:
    etas: np.ndarray
    plateaus: np.ndarray
    plateau_se: np.ndarray
    per_seed: np.ndarray
    gaussian_emp: np.ndarray
    gaussian_analytic: np.ndarray
    window: float
    agreeing_fraction: float
    required_fraction: float

    @property
    def monotone(self) -> bool:
        return bool(self.agreeing_fraction >= self.required_fraction)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "eta": self.etas,
            "plateau": self.plateaus,
            "plateau_se": self.plateau_se,
            "gaussian_bias_emp": self.gaussian_emp,
            "gaussian_bias_analytic": self.gaussian_analytic,
        })

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def is_nondecreasing(values: Sequence[float]) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) >= 0))


def _sweep_entry(args) -> float:
    model, cfg, theta0, window = args
    trace = run_saem(model, cfg, theta0=theta0)
    return residual_plateau(trace, window)


def bias_floor_sweep(model, etas: Sequence[float], cfg_template: SaemConfig, window: float = PLATEAU_WINDOW,
                     seeds: Sequence[int] = (0, 1, 2, 3, 4), required_fraction: float = 0.8,
                     theta0: Optional[np.ndarray] = None, gaussian_steps: int = 0,
                     n_workers: int = 1) -> BiasReport:
    """SAEM residual plateau for each stepsize η and seed.

    Divergent runs give a +inf plateau. The monotone verdict holds when at
    least ``required_fraction`` of the seeds produce nondecreasing plateaus.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.size == 0:
        raise ConfigError("etas", "need at least one stepsize")
    if np.any(np.diff(etas) <= 0):
        raise ConfigError("etas", "stepsizes must be sorted ascending")
    if not 0.0 < window <= 0.5:
        raise ConfigError("window", f"must lie in (0, 0.5], got {window}")
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    if not model.has_exact_posterior:
        raise ConfigError("model", f"{model.name} cannot compute the mean-field residual")

    jobs = []
    for eta in etas:
        for seed in seeds:
            cfg = replace(cfg_template, kernel=cfg_template.kernel.with_eta(float(eta)), seed=int(seed),
                          track_residual=True)
            jobs.append((model, cfg, theta0, window))
    if n_workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(min(n_workers, len(jobs))) as pool:
            values = pool.map(_sweep_entry, jobs)
    else:
        values = [_sweep_entry(job) for job in jobs]
    per_seed = np.array(values).reshape(len(etas), len(seeds))

    with np.errstate(invalid="ignore"):
        plateaus = per_seed.mean(axis=1)
        se = per_seed.std(axis=1, ddof=1) / np.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros(len(etas))
    agreeing = np.mean([is_nondecreasing(per_seed[:, j]) for j in range(len(seeds))])

    emp = np.full(len(etas), np.nan)
    ana = np.full(len(etas), np.nan)
    if gaussian_steps:
        rng = np.random.default_rng(seeds[0])
        for i, eta in enumerate(etas):
            if eta < 2.0:
                res = ula_gaussian_bias(1.0, float(eta), gaussian_steps, rng)
                emp[i], ana[i] = res.empirical - 1.0, res.analytic - 1.0

    for eta, p in zip(etas, plateaus):
        logger.info(f"eta={eta:g}: plateau |h|^2 = {p:.4g}")
    return BiasReport(etas=etas, plateaus=plateaus, plateau_se=se, per_seed=per_seed, gaussian_emp=emp,
                      gaussian_analytic=ana, window=window, agreeing_fraction=float(agreeing),
                      required_fraction=required_fraction)


def exact_sampler_plateaus(model, cfg_template: SaemConfig, window: float = PLATEAU_WINDOW,
                           seeds: Sequence[int] = (0, 1, 2, 3, 4),
                           theta0: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-seed residual plateau with exact posterior draws (no kernel bias)."""
    out = []
    for seed in seeds:
        cfg = replace(cfg_template, seed=int(seed), track_residual=True)
        trace = run_saem(model, cfg, theta0=theta0, transition=ExactPosteriorTransition(model))
        out.append(residual_plateau(trace, window))
    return np.array(out)


@dataclass
class DescentReport:
    lyapunov: np.ndarray
    smoothed: np.ndarray
    nonincreasing: bool


def descent_check(model, trace: Trace, start: int = 50, smoothing: int = 20, tol: float = 0.0) -> DescentReport:
    """Trend of V(s_k) = −l(θ̂(s_k)) after ``start`` in ``smoothing``-iteration block means."""
    records = [r for r in trace.records if r.k > start]
    if len(records) < 2 * smoothing:
        raise DomainError(f"need at least {2 * smoothing} recorded iterations after k={start}")
    v = np.array([model.lyapunov(r.s) for r in records])
    n_blocks = v.size // smoothing
    smoothed = v[:n_blocks * smoothing].reshape(n_blocks, smoothing).mean(axis=1)
    return DescentReport(lyapunov=v, smoothed=smoothed, nonincreasing=bool(np.all(np.diff(smoothed) <= tol)))


def parameter_error(thetas: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """|θ_k − θ*| per iteration, used by the parameter-trajectory figures."""
    return np.linalg.norm(np.asarray(thetas) - np.asarray(reference), axis=-1)


def summarize_replicates(traces: List[Trace]) -> pd.DataFrame:
    """Final θ of each replicate with its status."""
    rows = []
    for i, t in enumerate(traces):
        row = {"replicate": i, "status": t.status, "iterations": t.n_completed,
               "accept_rate": t.mean_acceptance()}
        if t.final_theta is not None:
            row.update({name: v for name, v in zip(t.param_names, t.final_theta)})
        rows.append(row)
    return pd.DataFrame(rows)
