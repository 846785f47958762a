"""
Stochastic-approximation EM driver.

Each iteration k = 1..n
  (a) moves z with a warm-started kernel targeting p(z | θ_{k-1}, y),
  (b) s_k = (1 − γ_k) s_{k-1} + γ_k S(z_k),
  (c) θ_k = θ̂(s_k).
"""
import logging
import multiprocessing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from langevin_saem.errors import ConfigError, DivergenceError, DomainError
from langevin_saem.mcmc import KernelConfig, KernelState, init_state, run_chain
from langevin_saem.model_core import LatentModel, as_stats, mean_field_residual

logger = logging.getLogger(__name__)


@dataclass
class GammaSchedule:
    """Robbins-Monro weights γ_k, k ≥ 1.

    ``kind='power'`` gives scale · k^(−exponent) (default 1/√k);
    ``kind='explicit'`` uses ``values`` (γ_1, γ_2, ...) and repeats the last one.
    """
    kind: str = "power"
    exponent: float = 0.5
    scale: float = 1.0
    values: Optional[List[float]] = None

    def __post_init__(self):
        if self.kind == "power":
            if not 0.0 < self.scale <= 1.0:
                raise ConfigError("gamma_schedule.scale", f"γ must lie in (0, 1], got scale={self.scale}")
            if self.exponent < 0:
                raise ConfigError("gamma_schedule.exponent", "negative exponent makes γ_k increasing")
        elif self.kind == "explicit":
            v = np.asarray(self.values if self.values is not None else [], dtype=float)
            if v.size == 0:
                raise ConfigError("gamma_schedule.values", "explicit schedule needs at least one value")
            if np.any(v <= 0) or np.any(v > 1):
                raise ConfigError("gamma_schedule.values", "every γ_k must lie in (0, 1]")
            if np.any(np.diff(v) > 0):
                raise ConfigError("gamma_schedule.values", "γ_k must be nonincreasing")
        else:
            raise ConfigError("gamma_schedule.kind", f"unknown schedule kind {self.kind!r}")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise DomainError("γ schedule is indexed from k = 1")
        if self.kind == "explicit":
            return float(self.values[min(k, len(self.values)) - 1])
        return float(self.scale * k ** (-self.exponent))

    def generate(self, n: int) -> np.ndarray:
        return np.array([self(k) for k in range(1, n + 1)])

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": "explicit", "values": list(self.values)}
        return {"kind": "power", "exponent": self.exponent, "scale": self.scale}


@dataclass
class SaemConfig:
    n_iterations: int
    kernel: KernelConfig
    mcmc_steps_per_iter: int = 4
    initial_burn_in: int = 0
    gamma_schedule: GammaSchedule = field(default_factory=GammaSchedule)
    seed: int = 0
    record_trace: bool = True
    track_residual: bool = True
    # Per-unit Metropolis correction for models that factorise over units
    blockwise: bool = False
    # Optional hook k -> η_k; η stays at kernel.eta when absent
    eta_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError("saem.n_iterations", "must be at least 1")
        if self.mcmc_steps_per_iter < 1:
            raise ConfigError("saem.mcmc_steps_per_iter", "must be at least 1")
        if self.initial_burn_in < 0:
            raise ConfigError("saem.initial_burn_in", "must be non-negative")
        if isinstance(self.gamma_schedule, dict):
            self.gamma_schedule = GammaSchedule(**self.gamma_schedule)
        if isinstance(self.kernel, dict):
            self.kernel = KernelConfig.from_dict(self.kernel)

    def to_dict(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "mcmc_steps_per_iter": self.mcmc_steps_per_iter,
            "initial_burn_in": self.initial_burn_in,
            "gamma_schedule": self.gamma_schedule.to_dict(),
            "seed": self.seed,
            "record_trace": self.record_trace,
            "track_residual": self.track_residual,
            "blockwise": self.blockwise,
            "kernel": self.kernel.to_dict(),
        }


@dataclass
class IterationRecord:
    k: int
    gamma: float
    s: np.ndarray
    theta: np.ndarray
    acceptance_rate: float
    h_norm: Optional[float] = None
    clamped: bool = False


@dataclass
class Trace:
    """Per-iteration (s_k, θ_k) history of one SAEM run."""
    param_names: Sequence[str]
    kernel: str
    eta: float
    records: List[IterationRecord] = field(default_factory=list)
    status: str = "completed"
    diverged_at: Optional[int] = None
    message: str = ""
    n_completed: int = 0

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final_theta(self) -> Optional[np.ndarray]:
        return self.records[-1].theta if self.records else None

    @property
    def final_stats(self) -> Optional[np.ndarray]:
        return self.records[-1].s if self.records else None

    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    def stats(self) -> np.ndarray:
        return np.array([r.s for r in self.records])

    def h_norms(self) -> np.ndarray:
        return np.array([np.nan if r.h_norm is None else r.h_norm for r in self.records])

    def mean_acceptance(self) -> float:
        rates = [r.acceptance_rate for r in self.records if np.isfinite(r.acceptance_rate)]
        return float(np.mean(rates)) if rates else float("nan")

    def to_frame(self) -> pd.DataFrame:
        """One row per iteration: k, gamma, accept_rate, theta_*, s_*, h_norm."""
        rows = []
        for r in self.records:
            row = {"k": r.k, "gamma": r.gamma, "accept_rate": r.acceptance_rate}
            for i, v in enumerate(r.theta):
                row[f"theta_{i + 1}"] = v
            for i, v in enumerate(r.s):
                row[f"s_{i + 1}"] = v
            row["h_norm"] = r.h_norm
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path: Union[str, Path], metadata: Optional[Dict[str, object]] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            for key, value in (metadata or {}).items():
                f.write(f"# {key}={value}\n")
            f.write(f"# status={self.status}\n")
            self.to_frame().to_csv(f, index=False)
        return path


def sa_update(s: np.ndarray, stat: np.ndarray, gamma: float, k: int = 0) -> np.ndarray:
    """Robbins-Monro step s + γ (S(z) − s) = (1 − γ) s + γ S(z)."""
    s = np.asarray(s, dtype=float)
    stat = np.asarray(stat, dtype=float)
    if s.shape != stat.shape:
        raise DomainError(f"statistic shape {stat.shape} does not match {s.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"γ must lie in [0, 1], got {gamma}")
    if gamma == 1.0:
        out = stat.copy()
    elif gamma == 0.0:
        out = s.copy()
    else:
        out = (1.0 - gamma) * s + gamma * stat
    if not np.all(np.isfinite(out)):
        raise DivergenceError(k, message="non-finite sufficient statistics")
    return out


class LangevinTransition:
    """Warm-started ULA/MALA moves targeting p(z | θ, y)."""

    def __init__(self, model: LatentModel, kernel: KernelConfig, blockwise: bool = False):
        self.model = model
        self.kernel = kernel
        self.blockwise = blockwise and model.unit_index is not None

    def start(self, z0: np.ndarray) -> KernelState:
        return init_state(z0, self.kernel)

    def move(self, state: KernelState, theta: np.ndarray, n_steps: int, rng: np.random.Generator) -> KernelState:
        cfg = self.kernel
        p = self.model.preconditioner(theta)
        if p is not None:
            cfg = cfg.with_preconditioner(p)
        log_density, force = self.model.posterior_target(theta, per_unit=self.blockwise)
        blocks = self.model.unit_index if self.blockwise else None
        state.reset_counters()
        state, _ = run_chain(state, n_steps, log_density, force, cfg, rng, blocks=blocks)
        return state


class ExactPosteriorTransition:
    """Independent draws from the exact posterior (zero kernel bias)."""

    def __init__(self, model: LatentModel):
        self.model = model

    def start(self, z0: np.ndarray) -> KernelState:
        return KernelState(position=np.array(z0, dtype=float), eta=0.0)

    def move(self, state: KernelState, theta: np.ndarray, n_steps: int, rng: np.random.Generator) -> KernelState:
        state.reset_counters()
        state.position = self.model.sample_posterior(theta, rng)
        state.accept_count = state.proposal_count = 1
        state.step_index += 1
        return state


def run_saem(model: LatentModel, cfg: SaemConfig, z0: Optional[np.ndarray] = None,
             s0: Optional[np.ndarray] = None, theta0: Optional[np.ndarray] = None,
             transition=None, rng: Optional[np.random.Generator] = None) -> Trace:
    """Run MCMC-SAEM and return its trace.

    The chain starts at θ₀ = m_step(s0) when s0 is given, otherwise at
    ``theta0``. Without s0 the statistics start from S(z) after burn-in.
    Divergence ends the run with a partial trace.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    transition = transition or LangevinTransition(model, cfg.kernel, cfg.blockwise)
    trace = Trace(param_names=model.param_names, kernel=getattr(cfg.kernel, "name", "exact"), eta=cfg.kernel.eta)
    track = cfg.track_residual and model.has_exact_posterior

    if s0 is not None:
        s = as_stats(s0, model)
        theta = model.check_params(model.m_step(s))
    elif theta0 is not None:
        s = None
        theta = model.check_params(theta0)
    else:
        s = None
        theta = None
    z = model.initial_latent(rng) if z0 is None else np.array(z0, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("initial latent is not finite")
    if theta is None:
        s = model.suff_stats(z)
        theta = model.check_params(model.m_step(s))

    logger.info(f"SAEM start: model={model.name} kernel={trace.kernel} eta={cfg.kernel.eta:g} "
                f"iterations={cfg.n_iterations}")
    state = transition.start(z)
    try:
        if cfg.initial_burn_in:
            state = transition.move(state, theta, cfg.initial_burn_in, rng)
    except DivergenceError as e:
        _mark_diverged(trace, 0, e)
        return trace
    if s is None:
        s = model.suff_stats(state.position)

    warned = False
    for k in range(1, cfg.n_iterations + 1):
        gamma = cfg.gamma_schedule(k)
        if cfg.eta_schedule is not None:
            state.eta = float(cfg.eta_schedule(k))
        try:
            state = transition.move(state, theta, cfg.mcmc_steps_per_iter, rng)
            s_next = sa_update(s, model.suff_stats(state.position), gamma, k)
        except DivergenceError as e:
            _mark_diverged(trace, k, e)
            break
        s = s_next
        clamped = model.is_clamped(s)
        if clamped and not warned:
            logger.warning(f"M-step variance floor hit at iteration {k}")
            warned = True
        theta = model.check_params(model.m_step(s))
        h_norm = float(np.linalg.norm(mean_field_residual(model, s))) if track else None
        record = IterationRecord(k=k, gamma=gamma, s=s.copy(), theta=theta.copy(),
                                 acceptance_rate=state.acceptance_rate, h_norm=h_norm, clamped=clamped)
        if cfg.record_trace or k == cfg.n_iterations:
            trace.records.append(record)
        trace.n_completed = k

    if not trace.diverged:
        logger.info(f"SAEM done: {trace.n_completed} iterations, mean acceptance {trace.mean_acceptance():.3f}")
    return trace


def _mark_diverged(trace: Trace, k: int, error: DivergenceError):
    trace.status = "diverged"
    trace.diverged_at = k
    trace.message = str(error)
    logger.warning(f"SAEM diverged at iteration {k} (eta={trace.eta:g}): {error}")


@dataclass
class ReplicateResult:
    index: int
    seed: int
    trace: Trace
    model: LatentModel
    train: object = None
    test: object = None


def replicate_seeds(master_seed: int, n_replicates: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(n_replicates)


def _run_replicate(args) -> ReplicateResult:
    index, seq, model_factory, cfg, dataset, split_spec, theta0 = args
    from langevin_saem.data import split

    split_seq, run_seq = seq.spawn(2)
    if dataset is not None and split_spec is not None:
        train, test = split(dataset, split_spec, np.random.default_rng(split_seq))
    else:
        train, test = dataset, None
    model = model_factory(train)
    seed = int(run_seq.generate_state(1)[0])
    run_cfg = _with_seed(cfg, seed)
    start = theta0(model) if callable(theta0) else theta0
    trace = run_saem(model, run_cfg, theta0=start)
    logger.info(f"replicate {index} finished with status {trace.status}")
    return ReplicateResult(index=index, seed=seed, trace=trace, model=model, train=train, test=test)


def _with_seed(cfg: SaemConfig, seed: int) -> SaemConfig:
    return replace(cfg, seed=seed)


def run_replicates(model_factory: Callable, cfg: SaemConfig, n_replicates: int, dataset=None,
                   split_spec=None, theta0=None, n_workers: int = 1) -> List[ReplicateResult]:
    """Independent SAEM runs, each on its own split and seed derived from cfg.seed.

    ``model_factory(train)`` builds the model for a replicate. Results come
    back in replicate order; divergence is recorded on the trace.
    """
    if n_replicates < 1:
        raise ConfigError("n_replicates", "must be at least 1")
    seqs = replicate_seeds(cfg.seed, n_replicates)
    jobs = [(i, seq, model_factory, cfg, dataset, split_spec, theta0) for i, seq in enumerate(seqs)]
    if n_workers > 1 and n_replicates > 1:
        with multiprocessing.Pool(min(n_workers, n_replicates)) as pool:
            results = pool.map(_run_replicate, jobs)
    else:
        results = [_run_replicate(job) for job in jobs]
    n_div = sum(r.trace.diverged for r in results)
    if n_div:
        logger.warning(f"{n_div}/{n_replicates} replicates diverged")
    return results
