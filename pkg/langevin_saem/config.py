"""
Experiment configuration.

One JSON file per experiment. Missing fields are filled from
``EXPERIMENT_DEFAULTS`` (the published protocol for each experiment), then
from the dataclass defaults. ``SAEM_OUTPUT_ROOT`` overrides the output root.
"""
import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from langevin_saem import __version__
from langevin_saem.data import SplitSpec
from langevin_saem.errors import ConfigError, DomainError
from langevin_saem.evaluation import AisConfig, PosteriorLpdConfig
from langevin_saem.mcmc import KernelConfig
from langevin_saem.saem import GammaSchedule, SaemConfig

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SAEM_OUTPUT_ROOT"
EXPERIMENTS = ("synthetic-logistic", "theophylline", "poisson-glm", "ard-logistic", "oracle-bias-sweep")
EVAL_METHODS = ("none", "ais", "posterior")

# Published protocol per experiment; files override any of these.
EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "synthetic-logistic": {
        "model": {"n": 1000, "d": 100, "kappa": 1000.0, "theta_true": [1.0, 0.1], "data_seed": 0},
        "theta0": [0.0, 1.0],
        "saem": {"n_iterations": 100, "initial_burn_in": 10},
        "kernels": [{"eta": 5e-3, "adjusted": False}, {"eta": 5e-3, "adjusted": True}],
        "n_replicates": 1,
        "evaluation": {"method": "none"},
    },
    "theophylline": {
        "model": {"data": "data/theophylline.csv", "schema": "theophylline", "pk_form": "printed"},
        "theta0": [-1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        "saem": {"n_iterations": 1000, "initial_burn_in": 100, "blockwise": True},
        "kernels": [{"eta": 1e-3, "adjusted": False}, {"eta": 1e-3, "adjusted": True}],
        "split": {"ratio": [9, 3], "by_unit": True},
        "n_replicates": 32,
        "evaluation": {"method": "ais", "ais": {"n_weights": 100, "n_annealing_steps": 1000}},
    },
    "poisson-glm": {
        "model": {"table": "azpro"},
        "saem": {"n_iterations": 100, "initial_burn_in": 10, "blockwise": True},
        "kernels": [{"eta": 1e-2, "adjusted": False}, {"eta": 1e-2, "adjusted": True}],
        "split": {"ratio": [8, 1], "by_unit": False},
        "n_replicates": 32,
        "evaluation": {"method": "ais", "ais": {"n_weights": 100, "n_annealing_steps": 1000}},
    },
    "ard-logistic": {
        "model": {"table": "german"},
        "theta0": "ones",
        "saem": {"n_iterations": 2000, "initial_burn_in": 100},
        "kernels": [{"eta": 1e-2, "adjusted": False}, {"eta": 1e-2, "adjusted": True}],
        "split": {"ratio": [8, 1], "by_unit": False},
        "n_replicates": 32,
        "evaluation": {"method": "posterior", "posterior": {"n_samples": 2000, "adaptation_steps": 2000}},
    },
    "oracle-bias-sweep": {
        "model": {"n_units": 5000, "obs_per_unit": 16, "mu": 0.5, "tau2": 1.0, "data_seed": 0},
        "saem": {"n_iterations": 2000, "mcmc_steps_per_iter": 20},
        "kernels": [{"eta": 1e-3, "adjusted": False}],
        "etas": [1e-3, 1e-2, 1e-1],
        "n_replicates": 1,
        "evaluation": {"method": "none"},
        "sweep": {"window": 0.1, "seeds": [0, 1, 2, 3, 4], "required_fraction": 0.8, "gaussian_steps": 100000},
    },
}

_TOP_FIELDS = ("experiment", "seed", "output_dir", "model", "theta0", "saem", "kernels", "etas", "split",
               "n_replicates", "evaluation", "sweep", "n_workers")
_SAEM_FIELDS = ("n_iterations", "mcmc_steps_per_iter", "initial_burn_in", "gamma_schedule", "record_trace",
                "track_residual", "blockwise")
_EVAL_FIELDS = ("method", "ais", "posterior")
_SWEEP_FIELDS = ("window", "seeds", "required_fraction", "gaussian_steps")


@dataclass
class SweepSettings:
    window: float = 0.1
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    required_fraction: float = 0.8
    gaussian_steps: int = 0

    def __post_init__(self):
        if not 0.0 < self.window <= 0.5:
            raise ConfigError("sweep.window", f"must lie in (0, 0.5], got {self.window}")
        if not self.seeds:
            raise ConfigError("sweep.seeds", "need at least one seed")
        if not 0.0 < self.required_fraction <= 1.0:
            raise ConfigError("sweep.required_fraction", "must lie in (0, 1]")


@dataclass
class EvaluationSettings:
    method: str = "none"
    ais: AisConfig = field(default_factory=AisConfig)
    posterior: PosteriorLpdConfig = field(default_factory=PosteriorLpdConfig)

    def __post_init__(self):
        if self.method not in EVAL_METHODS:
            raise ConfigError("evaluation.method", f"must be one of {EVAL_METHODS}, got {self.method!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    saem: Dict[str, Any]
    kernels: List[KernelConfig]
    model: Dict[str, Any] = field(default_factory=dict)
    theta0: Union[None, str, List[float]] = None
    etas: Optional[List[float]] = None
    split: Optional[SplitSpec] = None
    n_replicates: int = 1
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output_dir: str = "results"
    seed: int = 0
    n_workers: int = 1
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.kernels:
            raise ConfigError("kernels", "need at least one kernel")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates", "must be at least 1")
        if self.n_workers < 1:
            raise ConfigError("n_workers", "must be at least 1")
        if self.etas is not None:
            etas = np.asarray(self.etas, dtype=float)
            if etas.size == 0 or np.any(~np.isfinite(etas)) or np.any(etas <= 0):
                raise ConfigError("etas", "every stepsize must be a positive finite number")
            if np.any(np.diff(etas) <= 0):
                raise ConfigError("etas", "stepsizes must be sorted ascending")
        if isinstance(self.theta0, str) and self.theta0 != "ones":
            raise ConfigError("theta0", f"unknown symbolic start {self.theta0!r}")
        # Building one SaemConfig surfaces every schedule/count violation
        self.saem_config(self.kernels[0])

    def saem_config(self, kernel: KernelConfig, seed: Optional[int] = None) -> SaemConfig:
        return SaemConfig(kernel=kernel, seed=self.seed if seed is None else seed, **self.saem)

    def kernel_grid(self) -> List[KernelConfig]:
        """Every (kernel, η) pair to run; ``etas`` replaces each kernel's η."""
        if self.etas is None:
            return list(self.kernels)
        return [k.with_eta(float(eta)) for k in self.kernels for eta in self.etas]

    def output_path(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.output_dir)
        return Path(root) / out.name if root else out

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)

    def config_hash(self) -> str:
        return config_hash(self.raw)

    def metadata(self) -> Dict[str, Any]:
        return {"experiment": self.experiment, "seed": self.seed, "config_hash": self.config_hash(),
                "version": __version__}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def config_hash(d: Dict[str, Any]) -> str:
    canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def unknown_fields(d: Dict[str, Any]) -> List[str]:
    unknown = [k for k in d if k not in _TOP_FIELDS]
    for section, allowed in (("saem", _SAEM_FIELDS), ("evaluation", _EVAL_FIELDS), ("sweep", _SWEEP_FIELDS)):
        if isinstance(d.get(section), dict):
            unknown += [f"{section}.{k}" for k in d[section] if k not in allowed]
    return unknown


def effective_dict(d: Dict[str, Any]) -> Dict[str, Any]:
    name = d.get("experiment")
    if name not in EXPERIMENT_DEFAULTS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {name!r}")
    return _deep_merge(EXPERIMENT_DEFAULTS[name], d)


def from_dict(d: Dict[str, Any]) -> ExperimentConfig:
    unknown = unknown_fields(d)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    eff = effective_dict(d)
    evaluation = dict(eff.get("evaluation", {}))
    if "ais" in evaluation:
        evaluation["ais"] = AisConfig(**evaluation["ais"])
    if "posterior" in evaluation:
        evaluation["posterior"] = PosteriorLpdConfig(**evaluation["posterior"])
    saem = dict(eff["saem"])
    if "gamma_schedule" in saem and isinstance(saem["gamma_schedule"], dict):
        saem["gamma_schedule"] = GammaSchedule(**saem["gamma_schedule"])
    split = eff.get("split")
    try:
        kernels = [KernelConfig.from_dict(k) for k in eff["kernels"]]
        split_spec = SplitSpec(ratio=tuple(split["ratio"]), by_unit=split.get("by_unit", True)) if split else None
        return ExperimentConfig(
            experiment=eff["experiment"],
            saem=saem,
            kernels=kernels,
            model=eff.get("model", {}),
            theta0=eff.get("theta0"),
            etas=eff.get("etas"),
            split=split_spec,
            n_replicates=eff.get("n_replicates", 1),
            evaluation=EvaluationSettings(**evaluation),
            sweep=SweepSettings(**eff.get("sweep", {})),
            output_dir=eff.get("output_dir", f"results/{eff['experiment']}"),
            seed=eff.get("seed", 0),
            n_workers=eff.get("n_workers", 1),
            raw=eff,
        )
    except DomainError as e:
        raise ConfigError("split", str(e))
    except TypeError as e:
        raise ConfigError("config", str(e))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return from_dict(read_json(path))


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}", e.msg)
    if not isinstance(d, dict):
        raise ConfigError(str(path), "top level must be a JSON object")
    return d


@dataclass
class ValidationReport:
    unknown: List[str]
    violations: List[Tuple[str, str]]
    defaults: Dict[str, Any]

    @property
    def ok(self) -> bool:
        return not self.unknown and not self.violations

    def lines(self) -> List[str]:
        out = [f"unknown field: {name}" for name in self.unknown]
        out += [f"violation: {fld}: {reason}" for fld, reason in self.violations]
        out += [f"default: {key} = {json.dumps(value)}" for key, value in sorted(self.defaults.items())]
        out.append("OK" if self.ok else "INVALID")
        return out


def _collect_violations(eff: Dict[str, Any]) -> List[Tuple[str, str]]:
    """Check every constrained section on its own so all violations are listed."""
    violations = []

    def attempt(fn):
        try:
            fn()
        except ConfigError as e:
            violations.append((e.field, e.reason))
        except (DomainError, TypeError, ValueError, KeyError) as e:
            violations.append(("config", str(e)))

    kernels = eff.get("kernels") or []
    for i, k in enumerate(kernels):
        def check_kernel(k=k, i=i):
            try:
                KernelConfig.from_dict(k)
            except ConfigError as e:
                raise ConfigError(f"kernels[{i}].{e.field.split('.')[-1]}", e.reason)
        attempt(check_kernel)
    gamma = eff.get("saem", {}).get("gamma_schedule")
    if isinstance(gamma, dict):
        attempt(lambda: GammaSchedule(**gamma))
    if eff.get("split"):
        attempt(lambda: SplitSpec(ratio=tuple(eff["split"]["ratio"])))
    if eff.get("sweep"):
        attempt(lambda: SweepSettings(**eff["sweep"]))
    if not violations:
        attempt(lambda: from_dict({k: v for k, v in eff.items()}))
    return violations


def validate_config(path: Union[str, Path]) -> ValidationReport:
    """Unknown fields, constraint violations and the defaults that were filled in."""
    d = read_json(path)
    unknown = unknown_fields(d)
    try:
        eff = effective_dict(d)
    except ConfigError as e:
        return ValidationReport(unknown=unknown, violations=[(e.field, e.reason)], defaults={})
    defaults = {k: v for k, v in eff.items() if k not in d}
    violations = _collect_violations({k: v for k, v in eff.items() if k in _TOP_FIELDS})
    return ValidationReport(unknown=unknown, violations=violations, defaults=defaults)
