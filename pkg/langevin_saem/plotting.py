"""
Static figures rendered from the CSV/JSON files an experiment writes.
"""
import json
import logging
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from langevin_saem.errors import ConfigError  # noqa: E402

logger = logging.getLogger(__name__)

plt.style.use('seaborn-v0_8')
sns.set_palette("husl")


def read_trace(path: Path) -> pd.DataFrame:
    """Trace CSV without its ``# key=value`` header lines."""
    return pd.read_csv(path, comment="#")


def plot_traces(output_dir: Path) -> List[Path]:
    """θ_k trajectories of every trace file, one figure per parameter."""
    files = sorted((output_dir / "traces").glob("*.csv"))
    if not files:
        return []
    frames = []
    for f in files:
        df = read_trace(f)
        df["run"] = f.stem
        frames.append(df)
    traces = pd.concat(frames, ignore_index=True)
    figures = output_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    written = []
    for col in [c for c in traces.columns if c.startswith("theta_")]:
        fig, ax = plt.subplots(figsize=(10, 5))
        sns.lineplot(data=traces, x="k", y=col, hue="run", ax=ax, legend=len(files) <= 8)
        ax.set_title(f'{col} trajectory')
        ax.set_xlabel('SAEM iteration')
        ax.grid(True)
        plt.tight_layout()
        path = figures / f"{col}.png"
        plt.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def plot_sweep(output_dir: Path) -> List[Path]:
    """Mean test LPD against η with its bootstrap band, per kernel."""
    path = output_dir / "sweep.csv"
    if not path.exists():
        return []
    sweep = pd.read_csv(path, comment="#").dropna(subset=["mean_lpd"])
    if sweep.empty:
        return []
    figures = output_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 5))
    for kernel, rows in sweep.groupby("kernel"):
        rows = rows.sort_values("eta")
        ax.plot(rows["eta"], rows["mean_lpd"], marker="o", label=kernel.upper())
        ax.fill_between(rows["eta"], rows["ci_lower"], rows["ci_upper"], alpha=0.3)
    ax.set_xscale("log")
    ax.set_xlabel('stepsize η')
    ax.set_ylabel('test LPD')
    ax.legend()
    ax.grid(True)
    plt.tight_layout()
    out = figures / "lpd_vs_eta.png"
    plt.savefig(out)
    plt.close(fig)
    return [out]


def plot_bias(output_dir: Path) -> List[Path]:
    path = output_dir / "bias_report.csv"
    if not path.exists():
        return []
    report = pd.read_csv(path, comment="#")
    figures = output_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(12, 5))
    ax1.errorbar(report["eta"], report["plateau"], yerr=report["plateau_se"], marker="o")
    ax1.set_xscale("log")
    ax1.set_yscale("log")
    ax1.set_title('Residual plateau |h(s)|²')
    ax1.set_xlabel('stepsize η')
    ax2.plot(report["eta"], report["gaussian_bias_emp"], marker="o", label='empirical')
    ax2.plot(report["eta"], report["gaussian_bias_analytic"], linestyle="--", label='analytic')
    ax2.set_xscale("log")
    ax2.set_title('ULA variance bias on N(0, 1)')
    ax2.set_xlabel('stepsize η')
    ax2.legend()
    for ax in (ax1, ax2):
        ax.grid(True)
    plt.tight_layout()
    out = figures / "bias_floor.png"
    plt.savefig(out)
    plt.close(fig)
    return [out]


def plot_output(output_dir: Path) -> List[Path]:
    output_dir = Path(output_dir)
    if not output_dir.is_dir():
        raise ConfigError("output_dir", f"no results directory at {output_dir}")
    summary = output_dir / "summary.json"
    if summary.exists():
        experiment = json.loads(summary.read_text()).get("metadata", {}).get("experiment", "?")
        logger.info(f"plotting {experiment} results in {output_dir}")
    written = plot_traces(output_dir) + plot_sweep(output_dir) + plot_bias(output_dir)
    for path in written:
        logger.info(f"wrote {path}")
    return written
