"""
Dataset ingestion, synthetic generators, preprocessing and splitting.

CSV files are described by JSON schemas under ``data/schemas``. A schema
names the response, the feature columns (continuous or categorical) and,
for longitudinal data, the unit column. Categorical columns are one-hot
encoded at load time; continuous columns are z-standardized per split with
statistics fit on the training portion.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from langevin_saem.errors import DataError, DomainError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
SCHEMA_DIR = DATA_DIR / "schemas"

# (rows, feature columns after encoding) of the public datasets
TABLE_SHAPES: Dict[str, Tuple[int, int]] = {
    "medpar": (1495, 6),
    "azpro": (3589, 4),
    "phishing": (11054, 68),
    "german": (1000, 216),
    "caravan": (9822, 619),
}
COUNT_TABLES = ("medpar", "azpro")
# top singular value of the synthetic design, in units of √n
STIFF_SCALE = 3.5


@dataclass
class Schema:
    name: str
    response: str
    continuous: List[str] = field(default_factory=list)
    categorical: List[str] = field(default_factory=list)
    unit_column: Optional[str] = None
    # Extra numeric columns kept as-is (e.g. dose and time)
    passthrough: List[str] = field(default_factory=list)
    drop_zero_time: bool = False

    @property
    def columns(self) -> List[str]:
        cols = [self.unit_column] if self.unit_column else []
        return cols + self.passthrough + self.continuous + self.categorical + [self.response]

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"schema has unknown fields {sorted(unknown)}")
        return cls(**d)


def load_schema(name_or_path: Union[str, Path]) -> Schema:
    path = Path(name_or_path)
    if not path.suffix:
        path = SCHEMA_DIR / f"{name_or_path}.json"
    if not path.exists():
        raise DataError(f"schema file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return Schema.from_dict(json.load(f))


@dataclass(frozen=True)
class Dataset:
    """Model-ready table: numeric features, a response and optional units."""
    name: str
    frame: pd.DataFrame
    response: str
    features: Tuple[str, ...]
    unit_column: Optional[str] = None
    preprocessing: dict = field(default_factory=dict)

    @property
    def X(self) -> np.ndarray:
        return self.frame[list(self.features)].to_numpy(dtype=float)

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.response].to_numpy(dtype=float)

    @property
    def unit_ids(self) -> np.ndarray:
        if self.unit_column is None:
            return np.arange(len(self.frame))
        return pd.unique(self.frame[self.unit_column])

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    def __len__(self):
        return len(self.frame)

    def schema(self) -> Schema:
        """Schema that reloads this dataset's saved CSV unchanged."""
        known = set(self.features) | {self.response, self.unit_column}
        extra = [c for c in self.frame.columns if c not in known]
        return Schema(name=self.name, response=self.response, continuous=list(self.features),
                      unit_column=self.unit_column, passthrough=extra)


def _coerce_numeric(df: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    for col in columns:
        parsed = pd.to_numeric(df[col], errors="coerce")
        bad = parsed.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"unparseable or missing value {df[col].iloc[row]!r}", row=row, column=col)
        df[col] = parsed.astype(float)
    return df


def one_hot(df: pd.DataFrame, categorical: Sequence[str]) -> Tuple[pd.DataFrame, Dict[str, List[str]]]:
    """Expand categorical columns; categories come from the full table."""
    mapping = {}
    for col in categorical:
        if df[col].isna().any():
            row = int(np.flatnonzero(df[col].isna().to_numpy())[0])
            raise DataError("missing categorical value", row=row, column=col)
        dummies = pd.get_dummies(df[col].astype(str), prefix=col, prefix_sep="=", dtype=float)
        mapping[col] = list(dummies.columns)
        df = pd.concat([df.drop(columns=[col]), dummies], axis=1)
    return df, mapping


def load_csv(path: Union[str, Path], schema: Union[Schema, str]) -> Dataset:
    """Read a CSV against ``schema``; errors name the offending row and column."""
    schema = load_schema(schema) if isinstance(schema, str) else schema
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    try:
        df = pd.read_csv(path, comment="#", float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise DataError(f"empty data file: {path}")
    if df.empty:
        raise DataError(f"no rows in {path}")
    missing = [c for c in schema.columns if c not in df.columns]
    if missing:
        raise DataError(f"missing columns {missing}", column=missing[0])
    df = df[schema.columns].copy()
    df = _coerce_numeric(df, schema.passthrough + schema.continuous + [schema.response])
    if schema.drop_zero_time and "time" in df.columns:
        n_before = len(df)
        df = df[df["time"] > 0].reset_index(drop=True)
        logger.info(f"dropped {n_before - len(df)} rows at time 0")
    df, mapping = one_hot(df, schema.categorical)
    features = list(schema.continuous) + [c for cols in mapping.values() for c in cols]
    logger.info(f"loaded {len(df)} rows from {path.name} ({len(features)} features)")
    return Dataset(name=schema.name, frame=df, response=schema.response, features=tuple(features),
                   unit_column=schema.unit_column,
                   preprocessing={"continuous": list(schema.continuous), "one_hot": mapping})


def save_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.frame.to_csv(path, index=False)
    return path


# -- synthetic data ------------------------------------------------------

def _tabular(name: str, X: np.ndarray, y: np.ndarray, meta: dict) -> Dataset:
    features = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    frame = pd.DataFrame(X, columns=list(features))
    frame["y"] = y
    return Dataset(name=name, frame=frame, response="y", features=features, preprocessing=meta)


def conditioned_design(n: int, d: int, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """X = U Σ Vᵀ with condition number κ.

    The first ⌊(d−1)/2⌋ singular values sit at the top value 3.5√n and the
    rest are log-spaced down to 3.5√n/κ, so about half the directions are
    stiff.
    """
    if kappa < 1:
        raise DomainError(f"condition number must be at least 1, got {kappa}")
    if n < d or d < 2:
        raise DomainError(f"need n >= d >= 2, got n={n}, d={d}")
    U, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    n_stiff = (d - 1) // 2
    top = STIFF_SCALE * np.sqrt(n)
    s = top * np.concatenate([np.ones(n_stiff), np.logspace(0.0, -np.log10(kappa), d - n_stiff)])
    return (U * s) @ V.T


def gen_synthetic_logistic(n: int = 1000, d: int = 100, kappa: float = 1000.0,
                           theta_true: Sequence[float] = (1.0, 0.1), seed: Optional[int] = 0) -> Dataset:
    """Ill-conditioned logistic regression with β* ~ N(μ1, σ²I), θ_true = (μ, σ)."""
    rng = np.random.default_rng(seed)
    X = conditioned_design(n, d, kappa, rng)
    mu, sigma = theta_true
    beta = mu + sigma * rng.standard_normal(d)
    y = (rng.uniform(size=n) < expit(X @ beta)).astype(float)
    return _tabular("synthetic-logistic", X, y, {"beta_true": beta.tolist(), "kappa": kappa})


def gen_synthetic_poisson(n: int = 1495, d: int = 6, beta0: float = 0.5, sigma: float = 0.5,
                          seed: Optional[int] = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    beta = 0.3 * rng.standard_normal(d)
    eta = X @ beta + beta0 + sigma * rng.standard_normal(n)
    y = rng.poisson(np.exp(eta)).astype(float)
    return _tabular("synthetic-poisson", X, y, {"beta_true": beta.tolist(), "beta0": beta0, "sigma": sigma})


def gen_synthetic_ard(n: int = 1000, d: int = 20, n_active: Optional[int] = None,
                      seed: Optional[int] = 0) -> Dataset:
    """Logistic data where only the first ``n_active`` coefficients are nonzero."""
    rng = np.random.default_rng(seed)
    n_active = d // 2 if n_active is None else n_active
    if not 0 <= n_active <= d:
        raise DomainError("n_active must lie in [0, d]")
    X = rng.standard_normal((n, d))
    beta = np.zeros(d)
    beta[:n_active] = rng.choice([-1.0, 1.0], size=n_active) * rng.uniform(1.0, 2.0, size=n_active)
    y = (rng.uniform(size=n) < expit(X @ beta)).astype(float)
    return _tabular("synthetic-ard", X, y, {"beta_true": beta.tolist(), "n_active": n_active})


def gen_table_like(name: str, seed: Optional[int] = 0) -> Dataset:
    """Synthetic stand-in with the row and feature counts of a public table."""
    if name not in TABLE_SHAPES:
        raise DataError(f"unknown table {name!r}; expected one of {sorted(TABLE_SHAPES)}")
    n, d = TABLE_SHAPES[name]
    if name in COUNT_TABLES:
        ds = gen_synthetic_poisson(n=n, d=d, seed=seed)
    else:
        ds = gen_synthetic_ard(n=n, d=d, n_active=max(1, d // 10), seed=seed)
    return replace(ds, name=f"{name}-synthetic")


# -- preprocessing and splitting ----------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Train:test ratio a:b, split by unit when the dataset has units."""
    ratio: Tuple[int, int] = (9, 3)
    by_unit: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        a, b = self.ratio
        if a < 0 or b < 0 or a + b == 0:
            raise DomainError(f"invalid split ratio {self.ratio}")

    def n_test(self, n_units: int) -> int:
        a, b = self.ratio
        return int(round(n_units * b / (a + b)))


def fit_standardizer(dataset: Dataset) -> Dict[str, Tuple[float, float]]:
    """(mean, unbiased sd) of each continuous column."""
    out = {}
    for col in dataset.preprocessing.get("continuous", []):
        values = dataset.frame[col].to_numpy(dtype=float)
        mean = float(values.mean()) if values.size else 0.0
        sd = float(values.std(ddof=1)) if values.size > 1 else 1.0
        out[col] = (mean, sd if sd > 0 else 1.0)
    return out


def apply_standardizer(dataset: Dataset, scaling: Dict[str, Tuple[float, float]]) -> Dataset:
    frame = dataset.frame.copy()
    for col, (mean, sd) in scaling.items():
        frame[col] = (frame[col] - mean) / sd
    meta = dict(dataset.preprocessing, scaling={k: list(v) for k, v in scaling.items()})
    return replace(dataset, frame=frame, preprocessing=meta)


def _take(dataset: Dataset, mask: np.ndarray) -> Dataset:
    return replace(dataset, frame=dataset.frame[mask].reset_index(drop=True))


def split(dataset: Dataset, spec: SplitSpec, rng: Optional[np.random.Generator] = None) -> Tuple[Dataset, Dataset]:
    """Disjoint train/test partition; standardization is fit on train only."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    by_unit = spec.by_unit and dataset.unit_column is not None
    units = dataset.unit_ids if by_unit else np.arange(len(dataset))
    a, b = spec.ratio
    if a + b > len(units):
        raise DomainError(f"ratio {a}:{b} is infeasible for {len(units)} units")
    n_test = spec.n_test(len(units))
    order = rng.permutation(len(units))
    test_units = units[order[:n_test]]
    if by_unit:
        test_mask = dataset.frame[dataset.unit_column].isin(test_units).to_numpy()
    else:
        test_mask = np.zeros(len(dataset), dtype=bool)
        test_mask[test_units] = True
    train, test = _take(dataset, ~test_mask), _take(dataset, test_mask)
    scaling = fit_standardizer(train)
    logger.info(f"split {dataset.name}: {len(units) - n_test} train / {n_test} test units")
    return apply_standardizer(train, scaling), apply_standardizer(test, scaling)
