"""
Langevin MCMC kernels: ULA and MALA with an optional diagonal
preconditioner and dual-averaging stepsize adaptation.

The proposal is the Euler-Maruyama step of the preconditioned Langevin
diffusion,

    x' = x + η P ∇log π(x) + sqrt(2η P) ξ,    ξ ~ N(0, I).

ULA accepts every proposal; MALA applies a Metropolis-Hastings correction
with the P-weighted proposal density
q(x'|x) ∝ exp(−|x' − x − ηP∇log π(x)|²_{P⁻¹} / (4η)).

Positions may carry leading batch axes (independent chains); each chain
owns its rows and all randomness comes from the explicit ``rng``.
"""
import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from langevin_saem.errors import ConfigError, DivergenceError

logger = logging.getLogger(__name__)

# |position| beyond this counts as divergence
DIVERGENCE_BOUND = 1e8
# log η is saturated to this range by the dual-averaging update
LOG_ETA_LIMIT = 700.0


@dataclass
class AdaptationConfig:
    """Dual-averaging settings (Nesterov-style, NUTS parameterisation)."""
    target_accept: float = 0.57
    adaptation_steps: int = 2000
    shrink_factor: float = 10.0  # shrinkage target μ = log(shrink_factor · η₀)
    t0: float = 10.0
    kappa: float = 0.75
    gamma: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("adaptation.target_accept", f"must lie in (0, 1), got {self.target_accept}")
        if self.adaptation_steps < 0:
            raise ConfigError("adaptation.adaptation_steps", "must be non-negative")
        if not 0.5 < self.kappa <= 1.0:
            raise ConfigError("adaptation.kappa", f"must lie in (0.5, 1], got {self.kappa}")
        if self.t0 < 0 or self.gamma <= 0 or self.shrink_factor <= 0:
            raise ConfigError("adaptation", "t0 must be >= 0, gamma and shrink_factor > 0")


@dataclass
class KernelConfig:
    """One Langevin kernel: stepsize η, MALA/ULA switch, preconditioner, adaptation."""
    eta: float
    adjusted: bool = False
    preconditioner: Optional[np.ndarray] = None
    adaptation: Optional[AdaptationConfig] = None

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigError("kernel.eta", f"must be a positive finite number, got {self.eta}")
        if self.preconditioner is not None:
            p = np.asarray(self.preconditioner, dtype=float)
            if p.ndim != 1 or not np.all(np.isfinite(p)) or np.any(p <= 0):
                raise ConfigError("kernel.preconditioner", "must be a vector of positive entries")
            self.preconditioner = p
        if isinstance(self.adaptation, dict):
            self.adaptation = AdaptationConfig(**self.adaptation)
        if self.adaptation is not None and not self.adjusted:
            raise ConfigError("kernel.adaptation", "stepsize adaptation requires the adjusted (MALA) kernel")

    @property
    def name(self) -> str:
        return "mala" if self.adjusted else "ula"

    def with_preconditioner(self, preconditioner: Optional[np.ndarray]) -> "KernelConfig":
        return replace(self, preconditioner=preconditioner)

    def with_eta(self, eta: float) -> "KernelConfig":
        return replace(self, eta=eta)

    def to_dict(self) -> dict:
        out = {"eta": self.eta, "adjusted": self.adjusted}
        if self.preconditioner is not None:
            out["preconditioner"] = self.preconditioner.tolist()
        if self.adaptation is not None:
            out["adaptation"] = asdict(self.adaptation)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        d = dict(d)
        if d.get("preconditioner") is not None:
            d["preconditioner"] = np.asarray(d["preconditioner"], dtype=float)
        if d.get("adaptation") is not None:
            d["adaptation"] = AdaptationConfig(**d["adaptation"])
        return cls(**d)


@dataclass
class DualAveragingState:
    mu: float
    log_eta: float
    log_eta_avg: float = 0.0
    h_avg: float = 0.0
    iteration: int = 0


@dataclass
class KernelState:
    """Position of one chain (or a batch of chains) plus acceptance bookkeeping."""
    position: np.ndarray
    eta: float
    accept_count: int = 0
    proposal_count: int = 0
    step_index: int = 0
    dual_averaging: Optional[DualAveragingState] = None
    last_accept_prob: float = float("nan")

    @property
    def acceptance_rate(self) -> float:
        if self.proposal_count == 0:
            return float("nan")
        return self.accept_count / self.proposal_count

    def reset_counters(self) -> "KernelState":
        self.accept_count = 0
        self.proposal_count = 0
        return self

    def copy(self) -> "KernelState":
        da = replace(self.dual_averaging) if self.dual_averaging is not None else None
        return replace(self, position=np.array(self.position, copy=True), dual_averaging=da)


def init_state(position: np.ndarray, cfg: KernelConfig) -> KernelState:
    return KernelState(position=np.array(position, dtype=float, copy=True), eta=cfg.eta)


def block_matrix(blocks: np.ndarray, n_blocks: Optional[int] = None) -> np.ndarray:
    """One-hot (d, n_blocks) matrix summing coordinates into their blocks."""
    blocks = np.asarray(blocks, dtype=int)
    n_blocks = int(blocks.max()) + 1 if n_blocks is None else n_blocks
    m = np.zeros((blocks.size, n_blocks))
    m[np.arange(blocks.size), blocks] = 1.0
    return m


def _scale(cfg: KernelConfig):
    return 1.0 if cfg.preconditioner is None else cfg.preconditioner


def _n_chains(x: np.ndarray) -> int:
    return int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1


def _check_position(x: np.ndarray, state: KernelState):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
        raise DivergenceError(state.step_index, state.eta)


def ula_step(state: KernelState, force: Callable, cfg: KernelConfig, rng: np.random.Generator) -> KernelState:
    """One unadjusted Langevin step; never rejects.

    The state is owned by the calling chain and updated in place.
    """
    if cfg.adjusted:
        raise ConfigError("kernel.adjusted", "ula_step called with an adjusted kernel")
    x = state.position
    eta = state.eta
    p = _scale(cfg)
    g = np.asarray(force(x))
    if not np.all(np.isfinite(g)):
        raise DivergenceError(state.step_index, eta, "non-finite Langevin force")
    noise = rng.standard_normal(x.shape)
    x_new = x + eta * p * g + np.sqrt(2.0 * eta * p) * noise
    _check_position(x_new, state)
    n = _n_chains(x)
    state.position = x_new
    state.accept_count += n
    state.proposal_count += n
    state.step_index += 1
    state.last_accept_prob = 1.0
    return state


def mala_log_accept_ratio(x: np.ndarray, y: np.ndarray, log_density: Callable, force: Callable,
                          eta: float, preconditioner=None, blocks: Optional[np.ndarray] = None,
                          lp_x=None, g_x=None) -> np.ndarray:
    """log [π(y) q(x|y)] / [π(x) q(y|x)] for the preconditioned Langevin proposal."""
    p = 1.0 if preconditioner is None else preconditioner
    if lp_x is None:
        lp_x = log_density(x)
    if g_x is None:
        g_x = force(x)
    with np.errstate(all="ignore"):
        lp_y = np.asarray(log_density(y), dtype=float)
        g_y = np.asarray(force(y), dtype=float)
        fwd = (y - x - eta * p * g_x) ** 2 / p
        bwd = (x - y - eta * p * g_y) ** 2 / p
        if blocks is not None:
            bm = block_matrix(blocks, np.shape(lp_x)[-1])
            fwd = fwd @ bm
            bwd = bwd @ bm
        else:
            fwd = fwd.sum(axis=-1)
            bwd = bwd.sum(axis=-1)
        log_ratio = lp_y - lp_x + (fwd - bwd) / (4.0 * eta)
    return np.where(np.isnan(log_ratio), -np.inf, log_ratio)


def mala_step(state: KernelState, log_density: Callable, force: Callable, cfg: KernelConfig,
              rng: np.random.Generator, blocks: Optional[np.ndarray] = None) -> KernelState:
    """One Metropolis-adjusted Langevin step.

    With ``blocks`` (coordinate → unit map) the log-density must return one
    term per unit and each unit's block is accepted or rejected on its own.
    Non-finite proposals count as rejections.
    """
    if not cfg.adjusted:
        raise ConfigError("kernel.adjusted", "mala_step called with an unadjusted kernel")
    x = state.position
    eta = state.eta
    p = _scale(cfg)
    lp_x = np.asarray(log_density(x), dtype=float)
    if not np.all(np.isfinite(lp_x)):
        raise DivergenceError(state.step_index, eta, "log density not finite at the current state")
    g_x = np.asarray(force(x), dtype=float)
    noise = rng.standard_normal(x.shape)
    with np.errstate(all="ignore"):
        y = x + eta * p * g_x + np.sqrt(2.0 * eta * p) * noise
    log_ratio = mala_log_accept_ratio(x, y, log_density, force, eta, cfg.preconditioner,
                                      blocks=blocks, lp_x=lp_x, g_x=g_x)
    log_u = np.log(rng.uniform(size=np.shape(log_ratio)))
    # a unit with any non-finite coordinate is rejected as a whole
    if blocks is not None:
        blocks = np.asarray(blocks, dtype=int)
        bad = (~np.isfinite(y)).astype(float) @ block_matrix(blocks, np.shape(log_ratio)[-1])
        finite = bad == 0
    else:
        finite = np.all(np.isfinite(y), axis=-1)
    accepted = (log_u < log_ratio) & finite
    mask = accepted[..., blocks] if blocks is not None else np.asarray(accepted)[..., None]
    state.position = np.where(mask, y, x)
    accept_prob = np.where(finite, np.exp(np.minimum(0.0, log_ratio)), 0.0)
    state.accept_count += int(np.sum(accepted))
    state.proposal_count += int(np.size(accepted))
    state.step_index += 1
    state.last_accept_prob = float(np.mean(accept_prob))
    return state


def adapt_stepsize(state: KernelState, accepted: Union[bool, float], cfg: KernelConfig) -> KernelState:
    """Dual-averaging update of log η toward the target acceptance rate.

    ``accepted`` may be the boolean outcome or the acceptance probability.
    After the adaptation window η is frozen at the averaged value.
    """
    ad = cfg.adaptation
    if ad is None:
        return state
    da = state.dual_averaging
    if da is None:
        mu = float(np.log(ad.shrink_factor * cfg.eta))
        da = DualAveragingState(mu=mu, log_eta=float(np.log(cfg.eta)), log_eta_avg=float(np.log(cfg.eta)))
        state.dual_averaging = da
    if da.iteration >= ad.adaptation_steps:
        state.eta = float(np.exp(da.log_eta_avg))
        return state
    a = float(accepted)
    t = da.iteration + 1
    da.h_avg = (1.0 - 1.0 / (t + ad.t0)) * da.h_avg + (ad.target_accept - a) / (t + ad.t0)
    da.log_eta = float(np.clip(da.mu - np.sqrt(t) / ad.gamma * da.h_avg, -LOG_ETA_LIMIT, LOG_ETA_LIMIT))
    weight = t ** (-ad.kappa)
    da.log_eta_avg = weight * da.log_eta + (1.0 - weight) * da.log_eta_avg
    da.iteration = t
    if t >= ad.adaptation_steps:
        state.eta = float(np.exp(da.log_eta_avg))
    else:
        state.eta = float(np.exp(da.log_eta))
    return state


def kernel_step(state: KernelState, log_density: Optional[Callable], force: Callable, cfg: KernelConfig,
                rng: np.random.Generator, blocks: Optional[np.ndarray] = None) -> KernelState:
    if not cfg.adjusted:
        return ula_step(state, force, cfg, rng)
    state = mala_step(state, log_density, force, cfg, rng, blocks=blocks)
    if cfg.adaptation is not None:
        adapt_stepsize(state, state.last_accept_prob, cfg)
    return state


def run_chain(initial: Union[np.ndarray, KernelState], n_steps: int, log_density: Optional[Callable],
              force: Callable, cfg: KernelConfig, rng: np.random.Generator, keep_trace: bool = False,
              blocks: Optional[np.ndarray] = None) -> Tuple[KernelState, Optional[np.ndarray]]:
    """Apply ``n_steps`` kernel steps, optionally keeping every position.

    A KernelState passed as ``initial`` is warm-started (and advanced in
    place); an array starts a fresh chain at η = cfg.eta.
    """
    if n_steps < 0:
        raise ConfigError("n_steps", "must be non-negative")
    state = initial if isinstance(initial, KernelState) else init_state(initial, cfg)
    trace: Optional[List[np.ndarray]] = [] if keep_trace else None
    for _ in range(n_steps):
        kernel_step(state, log_density, force, cfg, rng, blocks=blocks)
        if trace is not None:
            trace.append(state.position.copy())
    samples = np.stack(trace) if trace else (np.empty((0,) + np.shape(state.position)) if keep_trace else None)
    return state, samples
