"""Flat ``section.key = value`` configuration files.

``#`` at the start of a line or after whitespace starts a comment. Lists are comma separated. Every
key is declared in ``SCHEMA``; unknown keys and badly typed values raise
:class:`ConfigurationError` naming the key path.
"""

from __future__ import annotations

import math
import re
from typing import Dict, Iterable

from .data import DEFAULT_DGP, CsvSchema, DgpSpec
from .errors import ConfigurationError
from .harness import FIXED, MODES, RESAMPLE, ExperimentConfig
from .metrics import DEFAULT_ALPHA, SIMULATION_TAU
from .models import DEFAULT_L2, PRESETS, SIMULATION_PRESETS
from .optim import LbfgsOptions, SgdOptions


def _int(v):
    return int(v)


def _float(v):
    x = float(v)
    if math.isnan(x):
        raise ValueError("nan")
    return x


def _bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(v)


def _str(v):
    return v.strip()


def _list(item):
    def parse(v):
        parts = [p.strip() for p in v.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def _choice(*options):
    def parse(v):
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return parse


# key -> (parser, default); a default of None means "unset".
SCHEMA = {
    "data.source": (_choice("simulate", "csv"), "simulate"),
    "data.coefficients": (_list(_float), DEFAULT_DGP.coefficients),
    "data.population_size": (_int, 100_000),
    "data.n_test": (_int, 10_000),
    "data.csv_path": (_str, None),
    "data.test_csv_path": (_str, None),
    "data.feature_columns": (_list(_str), None),
    "data.label_column": (_str, None),
    "data.id_column": (_str, None),
    "data.standardize": (_bool, True),
    "model.presets": (_list(_choice(*PRESETS)), SIMULATION_PRESETS),
    "model.l2_lambda": (_float, DEFAULT_L2),
    "optim.lbfgs.memory": (_int, LbfgsOptions().memory),
    "optim.lbfgs.grad_tol": (_float, LbfgsOptions().grad_tol),
    "optim.lbfgs.max_iters": (_int, LbfgsOptions().max_iters),
    "optim.sgd.learning_rate": (_float, None),
    "optim.sgd.batch_size": (_int, None),
    "optim.sgd.epochs": (_int, None),
    "harness.master_seed": (_int, None),
    "harness.modes": (_list(_choice(*MODES)), (RESAMPLE, FIXED)),
    "harness.B": (_int, 100),
    "harness.n_train": (_list(_int), (500, 5000)),
    "harness.n_jobs": (_int, 1),
    "harness.archive_models": (_bool, False),
    "metrics.tau": (_float, SIMULATION_TAU),
    "metrics.alpha": (_float, DEFAULT_ALPHA),
    "metrics.epsilon": (_float, 0.02),
    "metrics.bin_by": (_choice("auto", "true_risk", "developed_risk"), "auto"),
    "output.dir": (_str, "riskstab_output"),
}


def parse_text(text: str, source: str = "<config>") -> Dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        # "#" starts a comment at line start or after whitespace
        line = re.split(r"(?:^|\s)#", line, maxsplit=1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in raw:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


class Config(dict):
    """Resolved configuration: every schema key mapped to a typed value."""

    def experiment(self, preset: str, mode: str, n_train: int) -> ExperimentConfig:
        sgd = None
        if any(self[k] is not None for k in ("optim.sgd.learning_rate", "optim.sgd.batch_size", "optim.sgd.epochs")):
            from .optim import default_sgd_options

            base = default_sgd_options(preset)
            sgd = SgdOptions(
                learning_rate=self["optim.sgd.learning_rate"] if self["optim.sgd.learning_rate"] is not None else base.learning_rate,
                batch_size=self["optim.sgd.batch_size"] if self["optim.sgd.batch_size"] is not None else base.batch_size,
                epochs=self["optim.sgd.epochs"] if self["optim.sgd.epochs"] is not None else base.epochs,
            )
        csv_schema = None
        if self["data.source"] == "csv":
            csv_schema = CsvSchema(self["data.feature_columns"], self["data.label_column"], self["data.id_column"])
        return ExperimentConfig(
            mode=mode,
            model_preset=preset,
            master_seed=self["harness.master_seed"],
            B=self["harness.B"],
            n_train=n_train,
            n_test=self["data.n_test"],
            tau=self["metrics.tau"],
            epsilon=self["metrics.epsilon"],
            dgp=self.dgp() if self["data.source"] == "simulate" else None,
            population_size=self["data.population_size"],
            csv_path=self["data.csv_path"],
            csv_schema=csv_schema,
            test_csv_path=self["data.test_csv_path"],
            standardize=self["data.standardize"],
            l2_lambda=self["model.l2_lambda"],
            lbfgs=LbfgsOptions(
                memory=self["optim.lbfgs.memory"],
                grad_tol=self["optim.lbfgs.grad_tol"],
                max_iters=self["optim.lbfgs.max_iters"],
            ),
            sgd=sgd,
            n_jobs=self["harness.n_jobs"],
        )

    def dgp(self) -> DgpSpec:
        try:
            return DgpSpec.from_coefficients(self["data.coefficients"])
        except ConfigurationError as exc:
            raise ConfigurationError(f"data.coefficients: {exc}") from None

    def grid(self):
        """Every (preset, mode, n_train) combination the campaign runs, in order."""
        for preset in self["model.presets"]:
            for mode in self["harness.modes"]:
                for n_train in self["harness.n_train"]:
                    yield preset, mode, n_train

    def dumps(self) -> str:
        """Canonical text form; feeding it back through :func:`load` gives an equal Config."""
        lines = []
        for key in SCHEMA:
            value = self[key]
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve(raw: Dict[str, str], overrides: Iterable[str] = ()) -> Config:
    raw = dict(raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}")
    cfg = Config()
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parser(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigurationError(f"{key}: invalid value {raw[key]!r} ({exc})") from None
        else:
            cfg[key] = default
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    if cfg["harness.master_seed"] is None:
        raise ConfigurationError("harness.master_seed is required (no clock-based fallback)")
    if cfg["harness.B"] < 2:
        raise ConfigurationError("harness.B must be >= 2")
    if not 0 < cfg["metrics.tau"] < 1:
        raise ConfigurationError("metrics.tau must lie in (0, 1)")
    if not 0 < cfg["metrics.alpha"] < 1:
        raise ConfigurationError("metrics.alpha must lie in (0, 1)")
    if cfg["metrics.epsilon"] < 0:
        raise ConfigurationError("metrics.epsilon must be >= 0")
    if cfg["data.n_test"] < 1:
        raise ConfigurationError("data.n_test must be >= 1")
    if cfg["data.source"] == "simulate":
        cfg.dgp()
        if cfg["data.population_size"] < max(cfg["harness.n_train"]):
            raise ConfigurationError("data.population_size must be >= every harness.n_train")
    else:
        for key in ("data.csv_path", "data.feature_columns", "data.label_column"):
            if cfg[key] is None:
                raise ConfigurationError(f"{key} is required when data.source = csv")


def load(path, overrides: Iterable[str] = ()) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return resolve(parse_text(text, str(path)), overrides)


def loads(text: str, overrides: Iterable[str] = ()) -> Config:
    return resolve(parse_text(text), overrides)
