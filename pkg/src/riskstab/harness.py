"""Repeated instantiation of a learning pipeline and the competitive-set filter."""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import (
    DEFAULT_DGP,
    CsvSchema,
    DgpSpec,
    RiskDataset,
    fit_scaler,
    generate_population,
    load_csv,
    read_dataset_csv,
    subsample,
)
from .errors import ConfigurationError, JoinError, ParseError, TrainingDivergedError
from .metrics import SIMULATION_TAU, decision
from .models import bce, get_preset, predict
from .optim import LbfgsOptions, SgdOptions, default_sgd_options, fit

RESAMPLE = "resample_train"
FIXED = "fixed_train_vary_seed"
COMBINED = "resample_and_vary_seed"  # extra mode: both channels vary
MODES = (RESAMPLE, FIXED, COMBINED)

_MASK = (1 << 64) - 1
PURPOSES = {"sampling": 1, "init": 2, "batching": 3, "population": 4, "test": 5, "split": 6}


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, run_index: int, purpose: str) -> int:
    """64-bit seed for one (run, purpose) substream of ``master``."""
    if purpose not in PURPOSES:
        raise ConfigurationError(f"unknown seed purpose {purpose!r}")
    if run_index < 0:
        raise ConfigurationError("run_index must be >= 0")
    x = _splitmix64(int(master) & _MASK)
    x = _splitmix64(x ^ PURPOSES[purpose])
    return _splitmix64(x ^ (int(run_index) & _MASK))


def fingerprint(ids) -> str:
    """Order-sensitive digest of a training-row id sequence."""
    return hashlib.sha256(np.ascontiguousarray(ids, dtype="<i8").tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    model_preset: str
    master_seed: int
    B: int = 100
    n_train: int = 500
    n_test: int = 10_000
    tau: float = SIMULATION_TAU
    epsilon: float = 0.02
    # simulation source
    dgp: Optional[DgpSpec] = DEFAULT_DGP
    population_size: int = 100_000
    # csv source (used when csv_path is set)
    csv_path: Optional[str] = None
    csv_schema: Optional[CsvSchema] = None
    test_csv_path: Optional[str] = None
    standardize: bool = True
    l2_lambda: Optional[float] = None
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)
    sgd: Optional[SgdOptions] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        get_preset(self.model_preset)
        if self.master_seed is None:
            raise ConfigurationError("master_seed is required")
        if self.B < 2:
            raise ConfigurationError("B must be >= 2")
        if not 0 < self.tau < 1:
            raise ConfigurationError("tau must lie in (0, 1)")
        if not self.epsilon >= 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigurationError("n_train must be >= 2 and n_test >= 1")
        if self.csv_path is None and self.dgp is None:
            raise ConfigurationError("either a DGP or a CSV data source is required")
        if self.csv_path is not None and self.csv_schema is None:
            raise ConfigurationError("a CSV data source needs a schema")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be >= 1")

    @property
    def spec(self):
        spec = get_preset(self.model_preset)
        return spec if self.l2_lambda is None else spec.with_lambda(self.l2_lambda)

    @property
    def sgd_options(self) -> SgdOptions:
        return self.sgd if self.sgd is not None else default_sgd_options(self.model_preset)


@dataclass(frozen=True)
class RunMeta:
    run_index: int
    seed: int
    fingerprint: str
    bce: float
    accuracy: float
    converged: bool


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """``values[i, b]`` is run ``b``'s predicted risk for test row ``test_ids[i]``."""

    values: np.ndarray
    test_ids: np.ndarray
    run_meta: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        ids = np.array(self.test_ids, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != ids.shape[0]:
            raise JoinError(f"matrix shape {values.shape} does not match {ids.shape[0]} test ids")
        if values.shape[1] != len(self.run_meta):
            raise JoinError(f"{values.shape[1]} columns but {len(self.run_meta)} run records")
        if np.any((values < 0) | (values > 1)) or not np.all(np.isfinite(values)):
            raise ParseError("predictions must be probabilities")
        values.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "test_ids", ids)
        object.__setattr__(self, "run_meta", tuple(self.run_meta))

    @property
    def B(self) -> int:
        return self.values.shape[1]

    @property
    def run_indices(self):
        return [m.run_index for m in self.run_meta]

    def columns(self, positions) -> "PredictionMatrix":
        positions = list(positions)
        return PredictionMatrix(
            self.values[:, positions], self.test_ids, tuple(self.run_meta[k] for k in positions)
        )


# -------------------------------------------------------------- data setup


@dataclass(frozen=True, eq=False)
class ExperimentData:
    pool: RiskDataset
    test: RiskDataset


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Training pool and the fixed test set, both pure functions of the config."""
    if config.csv_path is None:
        pool = generate_population(
            config.dgp, config.population_size, derive_seed(config.master_seed, 0, "population")
        )
        test = generate_population(config.dgp, config.n_test, derive_seed(config.master_seed, 0, "test"))
        return ExperimentData(pool, test)
    data = load_csv(config.csv_path, config.csv_schema)
    if config.test_csv_path is not None:
        test = load_csv(config.test_csv_path, config.csv_schema)
        return ExperimentData(data, test)
    if config.n_test >= data.n:
        raise ConfigurationError(f"n_test={config.n_test} leaves no training rows out of {data.n}")
    order = np.random.default_rng(derive_seed(config.master_seed, 0, "split")).permutation(data.n)
    return ExperimentData(data.take(np.sort(order[config.n_test:])), data.take(np.sort(order[:config.n_test])))


def load_simulated(population_path, test_path) -> ExperimentData:
    return ExperimentData(read_dataset_csv(population_path), read_dataset_csv(test_path))


# ------------------------------------------------------------------- runs


def run_plan(config: ExperimentConfig, b: int):
    """``(sampling_index, optimization_index)``: which run's seeds each channel uses."""
    if config.mode == RESAMPLE:
        return b, 0
    if config.mode == FIXED:
        return 0, b
    return b, b


def _fit_one(config: ExperimentConfig, data: ExperimentData, b: int):
    sample_idx, opt_idx = run_plan(config, b)
    m = config.master_seed
    train = subsample(data.pool, config.n_train, derive_seed(m, sample_idx, "sampling"))
    scaler = fit_scaler(train) if config.standardize else None
    init_seed = derive_seed(m, opt_idx, "init")
    try:
        model = fit(
            config.spec,
            train,
            lbfgs=config.lbfgs,
            sgd=config.sgd_options,
            seed=init_seed,
            batch_seed=derive_seed(m, opt_idx, "batching"),
            scaler=scaler,
        )
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(exc.epoch, run_index=b) from exc
    p = predict(model, data.test.features)
    meta = RunMeta(
        run_index=b,
        seed=init_seed,
        fingerprint=fingerprint(train.ids),
        bce=bce(p, data.test.labels),
        accuracy=float(np.mean(decision(p, config.tau) == data.test.labels)),
        converged=bool(model.converged),
    )
    return p, meta


def run_experiment(config: ExperimentConfig, data: Optional[ExperimentData] = None) -> PredictionMatrix:
    """Fit ``config.B`` pipeline instances and predict the fixed test set.

    Columns are merged by run index, so ``n_jobs > 1`` yields the same matrix
    as a sequential run.
    """
    data = data if data is not None else prepare_data(config)
    runs = range(config.B)
    if config.n_jobs == 1:
        results = [_fit_one(config, data, b) for b in runs]
    else:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            futures = {b: pool.submit(_fit_one, config, data, b) for b in runs}
            results = [futures[b].result() for b in runs]
    values = np.column_stack([p for p, _ in results])
    meta = tuple(m for _, m in results)
    unconverged = [m.run_index for m in meta if not m.converged]
    if unconverged:
        warnings.warn(f"{len(unconverged)} run(s) hit max_iters before converging: {unconverged}")
    return PredictionMatrix(values, data.test.ids, meta)


@dataclass(frozen=True, eq=False)
class FilterResult:
    matrix: PredictionMatrix
    retained: tuple
    dropped: tuple


def competitive_filter(matrix: PredictionMatrix, epsilon: float) -> FilterResult:
    """Keep runs whose test BCE is within ``epsilon`` of the best run's."""
    if not epsilon >= 0:
        raise ConfigurationError("epsilon must be >= 0")
    losses = np.array([m.bce for m in matrix.run_meta])
    if math.isinf(epsilon):
        keep = list(range(matrix.B))
    else:
        keep = [k for k in range(matrix.B) if losses[k] <= losses.min() + epsilon]
    drop = [k for k in range(matrix.B) if k not in keep]
    if len(keep) < 2:
        warnings.warn(f"only {len(keep)} run(s) survive the competitive filter; ePIW/eDFR need 2")
    return FilterResult(
        matrix.columns(keep),
        tuple(matrix.run_meta[k].run_index for k in keep),
        tuple(matrix.run_meta[k].run_index for k in drop),
    )


# ----------------------------------------------------------------- CSV I/O


def _run_name(index: int) -> str:
    return f"run_{index:03d}"


def write_matrix_csv(matrix: PredictionMatrix, path, meta_path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [_run_name(i) for i in matrix.run_indices])
        for i in range(matrix.values.shape[0]):
            w.writerow([str(int(matrix.test_ids[i]))] + [repr(float(v)) for v in matrix.values[i]])
    with open(meta_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_index", "seed", "fingerprint", "bce", "accuracy", "converged"])
        for m in matrix.run_meta:
            w.writerow([m.run_index, m.seed, m.fingerprint, repr(m.bce), repr(m.accuracy), str(m.converged).lower()])


def read_matrix_csv(path, meta_path) -> PredictionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise ParseError(f"{path} is not a prediction matrix (missing id header)")
    header = rows[0]
    body = rows[1:]
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    values = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(header) - 1)
    with open(meta_path, newline="", encoding="utf-8") as fh:
        meta_rows = list(csv.DictReader(fh))
    meta = tuple(
        RunMeta(
            run_index=int(r["run_index"]),
            seed=int(r["seed"]),
            fingerprint=r["fingerprint"],
            bce=float(r["bce"]),
            accuracy=float(r["accuracy"]),
            converged=r["converged"] == "true",
        )
        for r in meta_rows
    )
    names = [_run_name(m.run_index) for m in meta]
    if names != header[1:]:
        raise JoinError(f"run columns {header[1:3]}... do not match the metadata in {meta_path}")
    return PredictionMatrix(values, ids, meta)


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, **changes)
