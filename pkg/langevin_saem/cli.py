"""
Command-line experiment runner.

    run <config> [--workers N]         run an experiment
    validate <config>                  report unknown fields, violations and defaults
    sweep <config> --eta 1e-3,1e-2     run over a list of stepsizes
    plot <output-dir>                  render figures from written results

Exit codes: 0 success, 1 config error, 2 data error, 3 all replicates diverged.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from langevin_saem.config import ExperimentConfig, from_dict, read_json, validate_config
from langevin_saem.data import Dataset, gen_synthetic_logistic, gen_table_like, load_csv
from langevin_saem.diagnostics import bias_floor_sweep, exact_sampler_plateaus
from langevin_saem.errors import ConfigError, DataError, DivergenceError, DomainError, EstimationError, SaemError
from langevin_saem.evaluation import LpdResult, ais_marginal_lpd, bootstrap_ci, posterior_sample_lpd
from langevin_saem.mcmc import KernelConfig
from langevin_saem.models import (ArdLogisticModel, ConjugateGaussianOracle, LogisticGaussianModel,
                                  PoissonLogNormalModel, TheophyllineModel)
from langevin_saem.saem import ReplicateResult, run_replicates

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class AllDivergedError(SaemError):
    """Every replicate of every kernel diverged."""


@dataclass
class ModelFactory:
    """Builds the experiment's model from a (training) dataset; picklable for worker pools."""
    experiment: str
    options: Dict[str, Any] = field(default_factory=dict)

    def __call__(self, dataset: Dataset):
        if self.experiment == "synthetic-logistic":
            return LogisticGaussianModel.from_dataset(dataset)
        if self.experiment == "theophylline":
            return TheophyllineModel.from_dataset(dataset, pk_form=self.options.get("pk_form", "printed"))
        if self.experiment == "poisson-glm":
            return PoissonLogNormalModel.from_dataset(dataset)
        if self.experiment == "ard-logistic":
            return ArdLogisticModel.from_dataset(dataset)
        raise ConfigError("experiment", f"no dataset model for {self.experiment!r}")


def ones_theta0(model) -> np.ndarray:
    return np.ones(len(model.param_names))


def resolve_theta0(cfg: ExperimentConfig):
    if cfg.theta0 is None:
        return None
    if cfg.theta0 == "ones":
        return ones_theta0
    return np.asarray(cfg.theta0, dtype=float)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    opts = cfg.model
    if cfg.experiment == "synthetic-logistic":
        return gen_synthetic_logistic(n=opts.get("n", 1000), d=opts.get("d", 100), kappa=opts.get("kappa", 1000.0),
                                      theta_true=tuple(opts.get("theta_true", (1.0, 0.1))),
                                      seed=opts.get("data_seed", 0))
    missing = "data" in opts and not Path(opts["data"]).exists()
    if missing and opts.get("synthetic_fallback") and "table" in opts:
        logger.warning(f"{opts['data']} not found; run python -m scripts.download_datasets for the real table")
        return gen_table_like(opts["table"], seed=opts.get("data_seed", 0))
    if "data" in opts:
        schema = opts.get("schema") or opts.get("table")
        if schema is None:
            raise ConfigError("model.schema", "a data file needs a schema name")
        return load_csv(opts["data"], schema)
    if "table" in opts:
        logger.warning(f"no data file for {opts['table']}; using a synthetic table of the same shape")
        return gen_table_like(opts["table"], seed=opts.get("data_seed", 0))
    raise ConfigError("model", "need either model.data or model.table")


# -- serialization -------------------------------------------------------

def _clean(value):
    """JSON-safe copy: arrays to lists, NaN/inf to None."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in list(value)]
    if isinstance(value, (np.floating, float)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
    logger.info(f"wrote {path}")
    return path


def write_table(path: Path, frame: pd.DataFrame, metadata: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in metadata.items():
            f.write(f"# {key}={value}\n")
        frame.to_csv(f, index=False)
    logger.info(f"wrote {path}")
    return path


# -- experiment runs -----------------------------------------------------

def evaluate_replicate(cfg: ExperimentConfig, factory: ModelFactory, result: ReplicateResult,
                       rng: np.random.Generator) -> Optional[np.ndarray]:
    """Per-unit test LPD of one replicate, or None without a test set."""
    method = cfg.evaluation.method
    if method == "none" or result.test is None or len(result.test) == 0:
        return None
    theta = result.trace.final_theta
    test_model = factory(result.test)
    if method == "ais":
        return ais_marginal_lpd(test_model, theta, cfg.evaluation.ais, rng)
    return posterior_sample_lpd(result.model, theta, test_model, cfg.evaluation.posterior, rng).lpd


def run_kernel(cfg: ExperimentConfig, kernel: KernelConfig, kernel_index: int, dataset: Dataset,
               factory: ModelFactory, out_dir: Path, n_workers: int) -> Dict[str, Any]:
    saem_cfg = cfg.saem_config(kernel)
    results = run_replicates(factory, saem_cfg, cfg.n_replicates, dataset=dataset, split_spec=cfg.split,
                             theta0=resolve_theta0(cfg), n_workers=n_workers)
    meta = dict(cfg.metadata(), kernel=kernel.name, eta=f"{kernel.eta:g}")
    replicate_lpd, test_units, finals = [], [], []
    for r in results:
        r.trace.to_csv(out_dir / "traces" / f"{kernel.name}_eta{kernel.eta:g}_rep{r.index:02d}.csv",
                       metadata=dict(meta, replicate=r.index, replicate_seed=r.seed))
        test_units.append(0 if r.test is None else r.test.n_units)
        if r.trace.diverged or r.trace.final_theta is None:
            replicate_lpd.append(float("nan"))
            continue
        finals.append(r.trace.final_theta)
        rng = np.random.default_rng([cfg.seed, kernel_index, r.index])
        try:
            lpd = evaluate_replicate(cfg, factory, r, rng)
        except (DivergenceError, EstimationError) as e:
            logger.warning(f"evaluation of replicate {r.index} failed: {e}")
            lpd = None
        if lpd is not None:
            unit_ids = list(r.test.unit_ids)
            name = f"{kernel.name}_eta{kernel.eta:g}_rep{r.index:02d}"
            LpdResult.from_values(lpd, unit_ids=unit_ids, rng=rng).to_csv(out_dir / "lpd" / f"{name}.csv")
            replicate_lpd.append(float(np.mean(lpd)))
        else:
            replicate_lpd.append(float("nan"))

    n_div = sum(r.trace.diverged for r in results)
    finite = np.array([v for v in replicate_lpd if np.isfinite(v)])
    run = {
        "kernel": kernel.name,
        "eta": kernel.eta,
        "n_replicates": len(results),
        "n_diverged": n_div,
        "test_units": test_units,
        "mean_acceptance": float(np.nanmean([r.trace.mean_acceptance() for r in results])),
        "replicate_lpd": replicate_lpd,
        "mean_lpd": float(finite.mean()) if finite.size else None,
        "ci_lower": None,
        "ci_upper": None,
        "mean_final_theta": np.mean(finals, axis=0).tolist() if finals else None,
        "param_names": list(results[0].model.param_names),
    }
    if finite.size:
        run["ci_lower"], run["ci_upper"] = bootstrap_ci(finite, rng=np.random.default_rng([cfg.seed, kernel_index]))
    return run


def run_dataset_experiment(cfg: ExperimentConfig, n_workers: int) -> Dict[str, Any]:
    out_dir = cfg.output_path()
    dataset = build_dataset(cfg)
    factory = ModelFactory(cfg.experiment, dict(cfg.model))
    runs = [run_kernel(cfg, kernel, i, dataset, factory, out_dir, n_workers)
            for i, kernel in enumerate(cfg.kernel_grid())]
    summary = {"metadata": cfg.metadata(), "config": cfg.to_dict(), "runs": runs}
    write_json(out_dir / "summary.json", summary)
    if cfg.etas is not None:
        sweep = pd.DataFrame([{k: r[k] for k in ("kernel", "eta", "mean_lpd", "ci_lower", "ci_upper",
                                                  "n_diverged", "mean_acceptance")} for r in runs])
        write_table(out_dir / "sweep.csv", sweep, cfg.metadata())
    if all(r["n_diverged"] == r["n_replicates"] for r in runs):
        raise AllDivergedError("every replicate diverged")
    return summary


def run_oracle_sweep(cfg: ExperimentConfig, n_workers: int) -> Dict[str, Any]:
    out_dir = cfg.output_path()
    opts = cfg.model
    model = ConjugateGaussianOracle.generate(n_units=opts.get("n_units", 5000),
                                             obs_per_unit=opts.get("obs_per_unit", 16),
                                             mu=opts.get("mu", 0.5), tau2=opts.get("tau2", 1.0),
                                             seed=opts.get("data_seed", 0))
    kernel = cfg.kernels[0]
    etas = cfg.etas if cfg.etas is not None else [kernel.eta]
    template = cfg.saem_config(kernel)
    theta0 = resolve_theta0(cfg)
    theta0 = model.marginal_mle() if theta0 is None else theta0
    s = cfg.sweep
    report = bias_floor_sweep(model, etas, template, window=s.window, seeds=s.seeds,
                              required_fraction=s.required_fraction, theta0=theta0,
                              gaussian_steps=s.gaussian_steps, n_workers=n_workers)
    exact = exact_sampler_plateaus(model, template, window=s.window, seeds=s.seeds, theta0=theta0)
    write_table(out_dir / "bias_report.csv", report.to_frame(), cfg.metadata())
    summary = {
        "metadata": cfg.metadata(),
        "config": cfg.to_dict(),
        "etas": list(report.etas),
        "plateaus": list(report.plateaus),
        "per_seed": report.per_seed.tolist(),
        "monotone": report.monotone,
        "agreeing_fraction": report.agreeing_fraction,
        "exact_sampler_plateaus": list(exact),
    }
    write_json(out_dir / "summary.json", summary)
    if np.all(np.isinf(report.per_seed)):
        raise AllDivergedError("every sweep run diverged")
    return summary


def run_config(cfg: ExperimentConfig, n_workers: Optional[int] = None) -> Dict[str, Any]:
    workers = cfg.n_workers if n_workers is None else n_workers
    logger.info(f"experiment {cfg.experiment} (config {cfg.config_hash()[:12]}) -> {cfg.output_path()}")
    if cfg.experiment == "oracle-bias-sweep":
        return run_oracle_sweep(cfg, workers)
    return run_dataset_experiment(cfg, workers)


# -- entry point ---------------------------------------------------------

def _parse_etas(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--eta", f"could not parse stepsize list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langevin-saem", description="SAEM with Langevin E-steps")
    parser.add_argument("--debug", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=None, help="replicate worker pool size")

    validate = sub.add_parser("validate", help="check a config without running it")
    validate.add_argument("config")

    sweep = sub.add_parser("sweep", help="run an experiment over a list of stepsizes")
    sweep.add_argument("config")
    sweep.add_argument("--eta", required=True, help="comma-separated stepsizes")
    sweep.add_argument("--workers", type=int, default=None)

    plot = sub.add_parser("plot", help="render figures from an output directory")
    plot.add_argument("output_dir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s', stream=sys.stderr)
    try:
        if args.command == "validate":
            report = validate_config(args.config)
            for line in report.lines():
                print(line)
            return EXIT_OK if report.ok else EXIT_CONFIG
        if args.command == "plot":
            from langevin_saem.plotting import plot_output
            plot_output(Path(args.output_dir))
            return EXIT_OK
        raw = read_json(args.config)
        if args.command == "sweep":
            raw["etas"] = _parse_etas(args.eta)
        cfg = from_dict(raw)
        run_config(cfg, args.workers)
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"config error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"data error: {e}")
        return EXIT_DATA
    except AllDivergedError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except DomainError as e:
        logger.error(f"invalid setting: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
