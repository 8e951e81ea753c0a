"""Datasets: simulation population, CSV ingestion, sampling and preprocessing."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigurationError,
    DegenerateFeatureError,
    ParseError,
    ShapeError,
    SizeError,
)

SIMULATED = "simulated"
INGESTED = "ingested"


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RiskDataset:
    """Feature matrix with binary labels and, for simulated data, the true risk.

    Arrays are copied and made read-only at construction.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    true_risk: Optional[np.ndarray] = None
    provenance: str = SIMULATED
    feature_names: tuple = field(default=())

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {features.shape}")
        n, d = features.shape
        labels = np.asarray(self.labels)
        ids = np.asarray(self.ids, dtype=np.int64)
        if labels.shape != (n,) or ids.shape != (n,):
            raise ShapeError(
                f"features ({n} rows), labels {labels.shape} and ids {ids.shape} disagree"
            )
        if not np.all((labels == 0) | (labels == 1)):
            raise ParseError("labels must be exactly 0 or 1")
        if len(np.unique(ids)) != n:
            raise ParseError("row ids must be unique")
        if self.provenance not in (SIMULATED, INGESTED):
            raise ConfigurationError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "ids", _frozen(ids))
        if self.true_risk is not None:
            risk = np.asarray(self.true_risk, dtype=np.float64)
            if risk.shape != (n,):
                raise ShapeError(f"true_risk has shape {risk.shape}, expected ({n},)")
            if not np.all((risk > 0.0) & (risk < 1.0)):
                raise ParseError("true_risk must lie strictly inside (0, 1)")
            object.__setattr__(self, "true_risk", _frozen(risk))
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise ShapeError(f"{len(names)} feature names for {d} columns")
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "RiskDataset":
        """Row subset (positional indices), ids and names preserved."""
        rows = np.asarray(rows, dtype=np.int64)
        return RiskDataset(
            features=self.features[rows],
            labels=self.labels[rows],
            ids=self.ids[rows],
            true_risk=None if self.true_risk is None else self.true_risk[rows],
            provenance=self.provenance,
            feature_names=self.feature_names,
        )

    def with_features(self, features) -> "RiskDataset":
        return RiskDataset(
            features=features,
            labels=self.labels,
            ids=self.ids,
            true_risk=self.true_risk,
            provenance=self.provenance,
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class DgpSpec:
    """Logistic data-generating process over i.i.d. standard normal features.

    ``coefficients`` holds the intercept first, then one slope per feature.
    """

    coefficients: tuple
    n_signal: int
    n_noise: int

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coefs)
        if self.n_signal < 0 or self.n_noise < 0:
            raise ConfigurationError("n_signal and n_noise must be non-negative")
        d = len(coefs) - 1
        if d < 1:
            raise ConfigurationError("a DGP needs an intercept and at least one slope")
        if d != self.n_signal + self.n_noise:
            raise ConfigurationError(
                f"{d} slopes but n_signal + n_noise = {self.n_signal + self.n_noise}"
            )
        nonzero = sum(1 for c in coefs[1:] if c != 0.0)
        if nonzero != self.n_signal:
            raise ConfigurationError(
                f"DGP declares {self.n_signal} signal features but has {nonzero} nonzero slopes"
            )
        if not all(math.isfinite(c) for c in coefs):
            raise ConfigurationError("DGP coefficients must be finite")

    @classmethod
    def from_coefficients(cls, coefficients: Sequence[float]) -> "DgpSpec":
        slopes = [float(c) for c in coefficients[1:]]
        n_signal = sum(1 for c in slopes if c != 0.0)
        return cls(tuple(coefficients), n_signal, len(slopes) - n_signal)

    @property
    def d(self) -> int:
        return len(self.coefficients) - 1

    @property
    def intercept(self) -> float:
        return self.coefficients[0]

    @property
    def slopes(self) -> np.ndarray:
        return np.asarray(self.coefficients[1:])


# Three signal slopes, two noise slopes. Bayes accuracy ~0.74 and prevalence
# ~0.52, checked by Monte Carlo in tests/test_data.py.
DEFAULT_DGP = DgpSpec((0.10, 1.0, -1.0, 0.75, 0.0, 0.0), n_signal=3, n_noise=2)


def true_risk(x, dgp: DgpSpec):
    """P(Y=1 | x) under ``dgp``; ``x`` may be one row or an n x d matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dgp.d:
        raise ShapeError(f"x has {x.shape[-1]} features, DGP expects {dgp.d}")
    return expit(dgp.intercept + x @ dgp.slopes)


def generate_population(dgp: DgpSpec, n: int, seed: int) -> RiskDataset:
    """Draw ``n`` rows from ``dgp``. Same arguments give bitwise-identical output."""
    if not isinstance(dgp, DgpSpec):
        raise ConfigurationError("dgp must be a DgpSpec")
    if n < 1:
        raise SizeError(f"population size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dgp.d))
    risk = true_risk(x, dgp)
    y = (rng.random(n) < risk).astype(np.int64)
    return RiskDataset(x, y, np.arange(n), true_risk=risk, provenance=SIMULATED)


def subsample(dataset: RiskDataset, n_train: int, seed: int) -> RiskDataset:
    """``n_train`` distinct rows drawn uniformly without replacement."""
    if n_train < 1 or n_train > dataset.n:
        raise SizeError(f"cannot draw {n_train} rows without replacement from {dataset.n}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(dataset.n, size=n_train, replace=False)
    return dataset.take(rows)


@dataclass(frozen=True, eq=False)
class Scaler:
    """Column standardization using training means and sample SDs (ddof=1)."""

    means: np.ndarray
    std_devs: np.ndarray

    def __post_init__(self):
        means = _frozen(self.means, np.float64)
        sds = _frozen(self.std_devs, np.float64)
        if means.shape != sds.shape or means.ndim != 1:
            raise ShapeError("scaler means and std_devs must be equal-length vectors")
        if not np.all(sds > 0):
            raise DegenerateFeatureError(int(np.argmin(sds)))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "std_devs", sds)

    def transform(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.means.shape[0]:
            raise ShapeError(
                f"scaler fitted on {self.means.shape[0]} columns, got {features.shape[-1]}"
            )
        return (features - self.means) / self.std_devs


def fit_scaler(train: RiskDataset) -> Scaler:
    if train.n < 2:
        raise SizeError("need at least two training rows to estimate a standard deviation")
    means = train.features.mean(axis=0)
    sds = train.features.std(axis=0, ddof=1)
    scale = np.maximum(1.0, np.abs(means))
    for j in range(train.d):
        if sds[j] <= 1e-12 * scale[j]:
            raise DegenerateFeatureError(train.feature_names[j])
    return Scaler(means, sds)


def apply_scaler(scaler: Scaler, dataset: RiskDataset) -> RiskDataset:
    return dataset.with_features(scaler.transform(dataset.features))


def polynomial_expand(features, degree: int = 2) -> np.ndarray:
    """Linear terms followed by every degree-2 monomial x_i x_j with i <= j."""
    if degree != 2:
        raise ConfigurationError(f"only degree-2 expansion is supported, got degree={degree}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be 2-d, got shape {x.shape}")
    d = x.shape[1]
    i, j = np.triu_indices(d)
    return np.hstack([x, x[:, i] * x[:, j]])


def expanded_dim(d: int, expansion: str) -> int:
    if expansion == "none":
        return d
    if expansion == "poly2":
        return d + d * (d + 1) // 2
    raise ConfigurationError(f"unknown feature expansion {expansion!r}")


# --------------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    feature_columns: tuple
    label_column: str
    id_column: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.feature_columns:
            raise ConfigurationError("schema needs at least one feature column")


def _parse_label(cell, row, column):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"label {cell!r} is not numeric", row=row, column=column) from None
    if value not in (0.0, 1.0):
        raise ParseError(f"label {cell!r} is not binary (expected 0 or 1)", row=row, column=column)
    return int(value)


def _parse_number(cell, row, column):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", row=row, column=column)
    return value


def load_csv(path, schema: CsvSchema) -> RiskDataset:
    """Read a headed, comma-separated UTF-8 file into an ingested dataset.

    Row numbers in errors are 0-based data-row indices (the header is not counted).
    """
    if not os.path.exists(path):
        raise ParseError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"empty file: {path}")
        header = [h.strip() for h in header]
        index = {name: k for k, name in enumerate(header)}
        wanted = list(schema.feature_columns) + [schema.label_column]
        if schema.id_column is not None:
            wanted.append(schema.id_column)
        for name in wanted:
            if name not in index:
                raise ParseError(f"missing column {name!r} in header", column=name)
        feats, labels, ids = [], [], []
        for row, cells in enumerate(reader):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(cells)}", row=row
                )
            feats.append(
                [_parse_number(cells[index[c]].strip(), row, c) for c in schema.feature_columns]
            )
            labels.append(_parse_label(cells[index[schema.label_column]].strip(), row, schema.label_column))
            if schema.id_column is not None:
                raw = cells[index[schema.id_column]].strip()
                try:
                    ids.append(int(raw))
                except ValueError:
                    raise ParseError(f"id {raw!r} is not an integer", row=row, column=schema.id_column) from None
    if not feats:
        raise ParseError(f"no data rows in {path}")
    if schema.id_column is None:
        ids = list(range(len(feats)))
    elif len(set(ids)) != len(ids):
        raise ParseError("duplicate row ids", column=schema.id_column)
    return RiskDataset(
        np.array(feats),
        np.array(labels),
        np.array(ids),
        provenance=INGESTED,
        feature_names=schema.feature_columns,
    )


def _fmt(v) -> str:
    return repr(float(v))


def write_dataset_csv(dataset: RiskDataset, path) -> None:
    """Write ``id, x1..xd, y[, true_risk]``; floats are written round-trip exact."""
    header = ["id"] + [f"x{j + 1}" for j in range(dataset.d)] + ["y"]
    if dataset.true_risk is not None:
        header.append("true_risk")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [str(int(dataset.ids[i]))]
            row.extend(_fmt(v) for v in dataset.features[i])
            row.append(str(int(dataset.labels[i])))
            if dataset.true_risk is not None:
                row.append(_fmt(dataset.true_risk[i]))
            w.writerow(row)


def read_dataset_csv(path) -> RiskDataset:
    """Inverse of :func:`write_dataset_csv`. A ``true_risk`` column marks the data as simulated."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ParseError(f"empty file: {path}")
    features = [h for h in header if h.startswith("x")]
    ds = load_csv(path, CsvSchema(tuple(features), "y", "id"))
    if "true_risk" not in header:
        return ds
    risk = np.loadtxt(path, delimiter=",", skiprows=1, usecols=header.index("true_risk"), ndmin=1)
    return RiskDataset(ds.features, ds.labels, ds.ids, true_risk=risk, provenance=SIMULATED)
