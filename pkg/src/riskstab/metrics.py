"""Individual-level stability diagnostics and aggregate performance.

ePIW is the central (1 - alpha) range of one individual's predictions
across runs; eDFR is the fraction of run pairs whose thresholded decisions
for that individual disagree.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigurationError, InsufficientRunsError, JoinError
from .models import bce

DEFAULT_ALPHA = 0.05
SIMULATION_TAU = 0.53
BIN_EDGES = np.arange(11) / 10
FIELDS = ("epiw", "edfr", "bias", "mse")


def _check_runs(B):
    if B < 2:
        raise InsufficientRunsError(
            f"ePIW and eDFR need at least 2 runs, got {B}"
        )


def quantile_type7(sorted_values, p):
    """Linear interpolation between order statistics at h = p (B - 1).

    ``sorted_values`` is sorted along its last axis.
    """
    B = sorted_values.shape[-1]
    h = p * (B - 1)
    lo = int(np.floor(h))
    hi = min(lo + 1, B - 1)
    frac = h - lo
    a = sorted_values[..., lo]
    b = sorted_values[..., hi]
    return a + frac * (b - a)


def epiw(predictions, alpha: float = DEFAULT_ALPHA):
    """Empirical prediction interval width ``Q(1 - alpha/2) - Q(alpha/2)``.

    Accepts one B-vector or an n x B matrix (one individual per row).
    """
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    p = np.sort(np.asarray(predictions, dtype=np.float64), axis=-1)
    _check_runs(p.shape[-1])
    width = quantile_type7(p, 1.0 - alpha / 2.0) - quantile_type7(p, alpha / 2.0)
    return np.maximum(width, 0.0) if np.ndim(width) else max(float(width), 0.0)


def decision(prediction, tau: float):
    """1 where ``prediction >= tau`` (boundary inclusive), else 0."""
    out = (np.asarray(prediction) >= tau).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def edfr_from_count(k, B):
    """``2 k (B - k) / (B (B - 1))`` for ``k`` positive decisions out of ``B``."""
    _check_runs(B)
    k = np.asarray(k, dtype=np.float64)
    return 2.0 * k * (B - k) / (B * (B - 1.0))


def edfr(predictions, tau: float):
    """Empirical decision flip rate for one B-vector or each row of an n x B matrix."""
    p = np.asarray(predictions, dtype=np.float64)
    B = p.shape[-1]
    _check_runs(B)
    k = np.sum(p >= tau, axis=-1)
    out = edfr_from_count(k, B)
    return float(out) if out.ndim == 0 else out


def edfr_max(B: int) -> float:
    return B / (2.0 * (B - 1))


# ------------------------------------------------------------- performance


@dataclass(frozen=True)
class PerformanceSummary:
    bce: np.ndarray
    accuracy: np.ndarray
    tau: float

    @property
    def bce_mean(self):
        return float(np.mean(self.bce))

    @property
    def bce_sd(self):
        return float(np.std(self.bce, ddof=1)) if len(self.bce) > 1 else 0.0

    @property
    def accuracy_mean(self):
        return float(np.mean(self.accuracy))

    @property
    def accuracy_sd(self):
        return float(np.std(self.accuracy, ddof=1)) if len(self.accuracy) > 1 else 0.0

    def as_dict(self):
        return {
            "runs": int(len(self.bce)),
            "tau": self.tau,
            "bce_mean": self.bce_mean,
            "bce_sd": self.bce_sd,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_sd": self.accuracy_sd,
        }


def aggregate_performance(matrix, labels, tau: float = SIMULATION_TAU, ids=None) -> PerformanceSummary:
    """Per-run unpenalized BCE and thresholded accuracy, with mean and sample SD.

    ``matrix`` is a PredictionMatrix or an n x B array. When ``ids`` is given
    (or ``labels`` is a dataset) rows are joined by id.
    """
    values = getattr(matrix, "values", matrix)
    values = np.asarray(values, dtype=np.float64)
    if hasattr(labels, "labels"):
        ids, labels = labels.ids, labels.labels
    labels = np.asarray(labels)
    test_ids = getattr(matrix, "test_ids", None)
    if ids is not None and test_ids is not None:
        if len(ids) != len(test_ids) or not np.array_equal(np.asarray(ids), test_ids):
            labels = _align(test_ids, np.asarray(ids), labels)
    if labels.shape != (values.shape[0],):
        raise JoinError(f"{labels.shape[0]} labels for {values.shape[0]} prediction rows")
    bces = np.array([bce(values[:, b], labels) for b in range(values.shape[1])])
    accs = np.array([np.mean(decision(values[:, b], tau) == labels) for b in range(values.shape[1])])
    return PerformanceSummary(bces, accs, tau)


def _align(target_ids, ids, values):
    pos = {int(i): k for k, i in enumerate(ids)}
    try:
        return np.asarray(values)[[pos[int(i)] for i in target_ids]]
    except KeyError as exc:
        raise JoinError(f"id {exc.args[0]} has no matching row") from None


# ------------------------------------------------------------------ report


@dataclass(frozen=True)
class StabilityRecord:
    id: int
    reference_risk: float
    epiw: float
    edfr: float
    bias: Optional[float] = None
    mse: Optional[float] = None


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Per-individual diagnostics stored column-wise (one entry per test row)."""

    ids: np.ndarray
    reference_risk: np.ndarray
    reference: str
    epiw: np.ndarray
    edfr: np.ndarray
    developed_risk: np.ndarray
    true_risk: Optional[np.ndarray]
    bias: Optional[np.ndarray]
    mse: Optional[np.ndarray]
    variance: np.ndarray
    n_runs: int
    tau: float
    alpha: float

    def __len__(self):
        return len(self.ids)

    def records(self) -> Iterator[StabilityRecord]:
        for i in range(len(self.ids)):
            yield StabilityRecord(
                id=int(self.ids[i]),
                reference_risk=float(self.reference_risk[i]),
                epiw=float(self.epiw[i]),
                edfr=float(self.edfr[i]),
                bias=None if self.bias is None else float(self.bias[i]),
                mse=None if self.mse is None else float(self.mse[i]),
            )

    def column(self, field: str) -> np.ndarray:
        if field not in FIELDS:
            raise ConfigurationError(f"unknown report field {field!r}; choose from {FIELDS}")
        col = getattr(self, field)
        if col is None:
            raise ConfigurationError(f"{field} needs the true risk, which this report does not have")
        return col

    def risk(self, by: str) -> np.ndarray:
        if by == "true_risk":
            if self.true_risk is None:
                raise ConfigurationError("binning by true_risk needs simulated data")
            return self.true_risk
        if by == "developed_risk":
            return self.developed_risk
        raise ConfigurationError(f"unknown binning reference {by!r}")


def stability_report(matrix, tau: float, alpha: float = DEFAULT_ALPHA, true_risk=None, ids=None) -> StabilityReport:
    """ePIW, eDFR and (given the true risk) bias and MSE for every row.

    The reference risk is the true risk when supplied, otherwise the
    developed risk (the row mean across runs).
    """
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    if values.ndim != 2:
        raise JoinError("prediction matrix must be 2-d")
    n, B = values.shape
    _check_runs(B)
    if ids is None:
        ids = getattr(matrix, "test_ids", None)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    if ids.shape != (n,):
        raise JoinError(f"{len(ids)} ids for {n} prediction rows")
    developed = values.mean(axis=1)
    variance = values.var(axis=1)
    bias = mse = None
    if true_risk is not None:
        true_risk = np.asarray(true_risk, dtype=np.float64)
        if true_risk.shape != (n,):
            raise JoinError(f"{true_risk.shape[0]} true risks for {n} prediction rows")
        bias = developed - true_risk
        mse = np.mean((values - true_risk[:, None]) ** 2, axis=1)
    return StabilityReport(
        ids=ids,
        reference_risk=developed if true_risk is None else true_risk,
        reference="developed_risk" if true_risk is None else "true_risk",
        epiw=epiw(values, alpha),
        edfr=edfr(values, tau),
        developed_risk=developed,
        true_risk=true_risk,
        bias=bias,
        mse=mse,
        variance=variance,
        n_runs=B,
        tau=tau,
        alpha=alpha,
    )


@dataclass(frozen=True, eq=False)
class BinnedSummary:
    field: str
    by: str
    bin_edges: np.ndarray
    means: np.ndarray  # NaN marks an empty bin
    counts: np.ndarray

    def labels(self):
        out = []
        for k in range(len(self.bin_edges) - 1):
            close = "]" if k == len(self.bin_edges) - 2 else ")"
            out.append(f"[{self.bin_edges[k]:.1f}, {self.bin_edges[k + 1]:.1f}{close}")
        return out

    def mean_or_none(self, k):
        return None if self.counts[k] == 0 else float(self.means[k])


def bin_index(risk) -> np.ndarray:
    """Index of the equal-width decile bin; 1.0 lands in the last (closed) bin."""
    risk = np.asarray(risk, dtype=np.float64)
    if np.any((risk < 0) | (risk > 1)) or np.any(~np.isfinite(risk)):
        raise ConfigurationError("reference risks must lie in [0, 1]")
    return np.minimum(np.floor(risk * 10).astype(np.int64), 9)


def binned_summary(report: StabilityReport, field: str, by: Optional[str] = None) -> BinnedSummary:
    by = by or report.reference
    values = report.column(field)
    idx = bin_index(report.risk(by))
    counts = np.bincount(idx, minlength=10)
    sums = np.bincount(idx, weights=values, minlength=10)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return BinnedSummary(field, by, BIN_EDGES.copy(), means, counts)


def mean_over_bins(summary: BinnedSummary, lo: float, hi: float) -> float:
    """Unweighted average of the populated bin means whose bins lie in [lo, hi)."""
    keep = [
        k for k in range(10)
        if summary.bin_edges[k] >= lo - 1e-12 and summary.bin_edges[k + 1] <= hi + 1e-12 and summary.counts[k] > 0
    ]
    if not keep:
        warnings.warn(f"no populated bins in [{lo}, {hi})")
        return float("nan")
    return float(np.mean(summary.means[keep]))
