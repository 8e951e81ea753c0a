"""Command-line front end: ``riskstab {simulate,run,report,compare,campaign}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .data import generate_population, read_dataset_csv, write_dataset_csv
from .errors import ConfigurationError, DataError, InsufficientRunsError, JoinError, RiskStabError
from .harness import (
    ExperimentData,
    competitive_filter,
    derive_seed,
    load_simulated,
    prepare_data,
    read_matrix_csv,
    run_experiment,
    write_matrix_csv,
)
from .metrics import FIELDS, aggregate_performance, binned_summary, edfr_max, stability_report
from .models import PRESETS

MANIFEST = "manifest.json"


# ------------------------------------------------------------------ files


def _atomic_write(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_text(path: Path, text: str) -> None:
    def w(tmp):
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    _atomic_write(path, w)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    def w(tmp):
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            out.writerows(rows)

    _atomic_write(path, w)


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _num(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


# --------------------------------------------------------------- manifest


def resolved_defaults(cfg) -> dict:
    presets = cfg["model.presets"]
    sgd = {}
    for name in presets:
        if PRESETS[name].optimizer == "sgd":
            opts = cfg.experiment(name, cfg["harness.modes"][0], cfg["harness.n_train"][0]).sgd_options
            sgd[name] = {"learning_rate": opts.learning_rate, "batch_size": opts.batch_size, "epochs": opts.epochs}
    return {
        "dgp_coefficients": list(cfg["data.coefficients"]) if cfg["data.source"] == "simulate" else None,
        "l2_lambda": cfg["model.l2_lambda"],
        "l2_penalty": "lambda * sum of squared weights (biases excluded)",
        "sgd": sgd,
        "lbfgs": {
            "memory": cfg["optim.lbfgs.memory"],
            "grad_tol": cfg["optim.lbfgs.grad_tol"],
            "max_iters": cfg["optim.lbfgs.max_iters"],
            "line_search": "strong Wolfe, c1=1e-4, c2=0.9",
        },
        "quantile": "linear interpolation between order statistics at h = p(B-1)",
        "standardization": "training-set mean and sample SD (ddof=1)" if cfg["data.standardize"] else "off",
        "developed_risk": "per-individual mean prediction across retained runs",
    }


def write_manifest(out: Path, cfg) -> dict:
    inventory = {}
    for path in sorted(p for p in out.rglob("*") if p.is_file()):
        rel = path.relative_to(out).as_posix()
        if rel == MANIFEST or path.name.startswith("."):
            continue
        inventory[rel] = _digest(path)
    manifest = {
        "toolkit": "riskstab",
        "version": __version__,
        "config": {k: cfgmod._format(v) for k, v in cfg.items() if v is not None},
        "resolved_defaults": resolved_defaults(cfg),
        "outputs": inventory,
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def load_config(path, overrides=()):
    """Read a config file, or the config echoed inside a manifest.json."""
    if str(path).endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                echoed = json.load(fh)["config"]
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigurationError(f"cannot read echoed config from {path}: {exc}") from None
        return cfgmod.resolve(dict(echoed), overrides)
    return cfgmod.load(path, overrides)


def _out_dir(cfg, args) -> Path:
    return Path(args.out if getattr(args, "out", None) else cfg["output.dir"])


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg, out: Path) -> list:
    """Write the simulation population and the fixed test set."""
    if cfg["data.source"] != "simulate":
        raise ConfigurationError("simulate requires data.source = simulate")
    seed = cfg["harness.master_seed"]
    dgp = cfg.dgp()
    pop = generate_population(dgp, cfg["data.population_size"], derive_seed(seed, 0, "population"))
    test = generate_population(dgp, cfg["data.n_test"], derive_seed(seed, 0, "test"))
    written = []
    for name, ds in (("population.csv", pop), ("test.csv", test)):
        path = out / "data" / name
        _atomic_write(path, lambda tmp, ds=ds: write_dataset_csv(ds, tmp))
        written.append(path)
    write_manifest(out, cfg)
    return written


def _load_data(cfg, out: Path) -> ExperimentData:
    if cfg["data.source"] == "simulate":
        pop, test = out / "data" / "population.csv", out / "data" / "test.csv"
        for p in (pop, test):
            if not p.exists():
                raise DataError(f"missing dataset file {p}; run `riskstab simulate` first")
        return load_simulated(pop, test)
    data = prepare_data(cfg.experiment(cfg["model.presets"][0], cfg["harness.modes"][0], cfg["harness.n_train"][0]))
    _atomic_write(out / "data" / "test.csv", lambda tmp: write_dataset_csv(data.test, tmp))
    return data


def _write_matrix(matrix, rd: Path) -> None:
    """Write predictions.csv and run_meta.csv, each via temp file and rename."""
    rd.mkdir(parents=True, exist_ok=True)
    tmp_m = rd / ".predictions.csv.tmp"
    tmp_r = rd / ".run_meta.csv.tmp"
    try:
        write_matrix_csv(matrix, tmp_m, tmp_r)
        os.replace(tmp_m, rd / "predictions.csv")
        os.replace(tmp_r, rd / "run_meta.csv")
    finally:
        for t in (tmp_m, tmp_r):
            if t.exists():
                t.unlink()


def run_dir_name(preset, mode, n_train) -> str:
    return f"{preset}__{mode}__n{n_train}"


def cmd_run(cfg, out: Path, log=None) -> list:
    """Execute every (preset, mode, n_train) cell of the config grid."""
    data = _load_data(cfg, out)
    run_dirs = []
    for preset, mode, n_train in cfg.grid():
        exp = cfg.experiment(preset, mode, n_train)
        if n_train > data.pool.n:
            raise DataError(f"n_train={n_train} exceeds the {data.pool.n} available training rows")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            matrix = run_experiment(exp, data)
        for w in caught:
            print(f"warning [{preset} {mode} n={n_train}]: {w.message}", file=log or sys.stderr)
        rd = out / "runs" / run_dir_name(preset, mode, n_train)
        rd.mkdir(parents=True, exist_ok=True)
        _write_matrix(matrix, rd)
        _write_json(
            rd / "run.json",
            {
                "preset": preset,
                "mode": mode,
                "n_train": n_train,
                "B": exp.B,
                "tau": exp.tau,
                "master_seed": exp.master_seed,
                "test_path": os.path.relpath(out / "data" / "test.csv", rd).replace(os.sep, "/"),
            },
        )
        run_dirs.append(rd)
    write_manifest(out, cfg)
    return run_dirs


def cmd_report(matrix_path, tau, alpha, epsilon, bin_by="auto", test_path=None, out=None, log=None):
    """Per-individual, binned and aggregate outputs for one prediction matrix."""
    matrix_path = Path(matrix_path)
    rd = matrix_path.parent
    meta_path = rd / "run_meta.csv"
    if not matrix_path.exists() or not meta_path.exists():
        raise DataError(f"need {matrix_path} and its sibling run_meta.csv")
    info = {}
    if (rd / "run.json").exists():
        info = json.loads((rd / "run.json").read_text(encoding="utf-8"))
    if test_path is None:
        if "test_path" not in info:
            raise DataError("no test set given and no run.json next to the matrix")
        test_path = rd / info["test_path"]
    test = read_dataset_csv(test_path)
    matrix = read_matrix_csv(matrix_path, meta_path)
    if test.n != matrix.values.shape[0] or not np.array_equal(test.ids, matrix.test_ids):
        raise JoinError(
            f"prediction matrix has {matrix.values.shape[0]} rows but test set {test_path} has {test.n}"
        )
    out = Path(out) if out is not None else rd / "report"
    filt = None
    if epsilon is not None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            filt = competitive_filter(matrix, epsilon)
        for w in caught:
            print(f"warning: {w.message}", file=log or sys.stderr)
    kept = filt.matrix if filt is not None else matrix
    perf = aggregate_performance(kept, test.labels, tau=tau)
    summary = {
        "preset": info.get("preset"),
        "mode": info.get("mode"),
        "n_train": info.get("n_train"),
        "tau": tau,
        "alpha": alpha,
        "epsilon": None if epsilon is None or math.isinf(epsilon) else epsilon,
        "runs_total": matrix.B,
        "runs_retained": kept.B,
        "runs_dropped": [] if filt is None else list(filt.dropped),
        "performance": perf.as_dict(),
    }
    if kept.B < 2:
        summary["stability"] = None
        summary["note"] = f"only {kept.B} run retained; ePIW/eDFR need at least 2"
        _write_json(out / "summary.json", summary)
        raise InsufficientRunsError(
            f"competitive filter (epsilon={epsilon}) retained {kept.B} run; ePIW and eDFR need at least 2"
        )
    report = stability_report(kept, tau, alpha, true_risk=test.true_risk)
    if bin_by == "auto":
        bin_by = report.reference
    _write_rows(
        out / "individuals.csv",
        ["id", "reference_risk", "developed_risk", "epiw", "edfr", "bias", "mse"],
        (
            [int(report.ids[i]), _num(report.reference_risk[i]), _num(report.developed_risk[i]),
             _num(report.epiw[i]), _num(report.edfr[i]),
             _num(None if report.bias is None else report.bias[i]),
             _num(None if report.mse is None else report.mse[i])]
            for i in range(len(report))
        ),
    )
    fields = [f for f in FIELDS if f in ("epiw", "edfr") or report.true_risk is not None]
    for field in fields:
        s = binned_summary(report, field, by=bin_by)
        _write_rows(
            out / f"binned_{field}.csv",
            ["bin", "lower", "upper", "count", "mean"],
            (
                [s.labels()[k], _num(s.bin_edges[k]), _num(s.bin_edges[k + 1]), int(s.counts[k]), _num(s.mean_or_none(k))]
                for k in range(10)
            ),
        )
    summary["stability"] = {
        "bin_by": bin_by,
        "epiw_mean": float(report.epiw.mean()),
        "edfr_mean": float(report.edfr.mean()),
        "edfr_upper_bound": edfr_max(kept.B),
        "mse_mean": None if report.mse is None else float(report.mse.mean()),
        "bias_mean": None if report.bias is None else float(report.bias.mean()),
    }
    _write_json(out / "summary.json", summary)
    return out


def _read_binned(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    edges = [(r["lower"], r["upper"]) for r in rows]
    means = [None if r["mean"] == "" else float(r["mean"]) for r in rows]
    return [r["bin"] for r in rows], edges, means


def cmd_compare(report_dirs, out: Path, log=None) -> list:
    """Side-by-side binned metrics; flags the least unstable model in each bin."""
    if len(report_dirs) < 2:
        raise ConfigurationError("compare needs at least two reports")
    labels, summaries = [], []
    for k, d in enumerate(report_dirs):
        d = Path(d)
        if not (d / "summary.json").exists():
            raise DataError(f"{d} is not a report directory (no summary.json)")
        s = json.loads((d / "summary.json").read_text(encoding="utf-8"))
        label = "|".join(str(s.get(x)) for x in ("preset", "mode", "n_train")) if s.get("preset") else d.name
        if label in labels:
            label = f"{label}#{k}"
        labels.append(label)
        summaries.append(s)
    taus = {s["tau"] for s in summaries}
    if len(taus) > 1:
        print(f"warning: reports use different thresholds tau={sorted(taus)}", file=log or sys.stderr)
    bin_refs = {s["stability"]["bin_by"] for s in summaries if s.get("stability")}
    if len(bin_refs) > 1:
        raise DataError(f"reports are binned by different references: {sorted(bin_refs)}")
    written = []
    for field in FIELDS:
        paths = [Path(d) / f"binned_{field}.csv" for d in report_dirs]
        if not all(p.exists() for p in paths):
            continue
        tables = [_read_binned(p) for p in paths]
        if any(t[1] != tables[0][1] for t in tables):
            raise DataError(f"bin edges of binned_{field}.csv differ between reports")
        rows = []
        for k, name in enumerate(tables[0][0]):
            vals = [t[2][k] for t in tables]
            present = [(abs(v) if field == "bias" else v, lab) for v, lab in zip(vals, labels) if v is not None]
            if present:
                best = min(v for v, _ in present)
                flag = "|".join(lab for v, lab in present if v == best)
                spread = max(v for v, _ in present) - best
            else:
                flag, spread = "", None
            rows.append([name] + [_num(v) for v in vals] + [flag, _num(spread)])
        path = out / f"compare_{field}.csv"
        _write_rows(path, ["bin"] + labels + ["most_stable", "spread"], rows)
        written.append(path)
    return written


# --------------------------------------------------------------------- CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="config file (or a manifest.json echoing one)")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return sp

    with_config("simulate", "write the simulation population and test set")
    with_config("run", "retrain every configured pipeline B times")
    with_config("campaign", "simulate (if applicable), run and report in one go")

    rp = sub.add_parser("report", help="stability report for one prediction matrix")
    rp.add_argument("matrix", help="predictions.csv written by `run`")
    rp.add_argument("--tau", type=float, default=None)
    rp.add_argument("--alpha", type=float, default=0.05)
    rp.add_argument("--epsilon", type=float, default=None, help="competitive-set tolerance (default: no filter)")
    rp.add_argument("--bin-by", choices=("auto", "true_risk", "developed_risk"), default="auto")
    rp.add_argument("--test", help="test dataset CSV (default: from run.json)")
    rp.add_argument("--out", help="report directory (default: <run dir>/report)")

    cp = sub.add_parser("compare", help="compare binned metrics across reports")
    cp.add_argument("reports", nargs="+", help="report directories")
    cp.add_argument("--out", default="comparison", help="output directory")
    return p


def cmd_campaign(cfg, out: Path, log=None):
    if cfg["data.source"] == "simulate":
        cmd_simulate(cfg, out)
    run_dirs = cmd_run(cfg, out, log)
    for rd in run_dirs:
        cmd_report(
            rd / "predictions.csv",
            cfg["metrics.tau"],
            cfg["metrics.alpha"],
            cfg["metrics.epsilon"],
            cfg["metrics.bin_by"],
            log=log,
        )
    return write_manifest(out, cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("simulate", "run", "campaign"):
            cfg = load_config(args.config, args.set)
            out = _out_dir(cfg, args)
            if args.command == "simulate":
                for path in cmd_simulate(cfg, out):
                    print(path)
            elif args.command == "run":
                for rd in cmd_run(cfg, out):
                    print(rd / "predictions.csv")
            else:
                manifest = cmd_campaign(cfg, out)
                print(f"{len(manifest['outputs'])} files written under {out}")
        elif args.command == "report":
            tau = args.tau
            if tau is None:
                info = Path(args.matrix).parent / "run.json"
                tau = json.loads(info.read_text())["tau"] if info.exists() else None
                if tau is None:
                    raise ConfigurationError("--tau is required when the run has no run.json")
            print(cmd_report(args.matrix, tau, args.alpha, args.epsilon, args.bin_by, args.test, args.out))
        else:
            for path in cmd_compare(args.reports, Path(args.out)):
                print(path)
    except RiskStabError as exc:
        print(f"riskstab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
