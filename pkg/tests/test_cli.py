import csv
import json

import numpy as np
import pytest

from riskstab.cli import main
from riskstab.data import DEFAULT_DGP, generate_population

BASE = """\
# small campaign used across these tests
harness.master_seed = 5
harness.B = 5
harness.n_train = 300
data.population_size = 3000
data.n_test = 400
model.presets = Log-LBFGS
harness.modes = fixed_train_vary_seed
"""


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "audit.cfg"
    path.write_text(BASE)
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def test_simulate_defaults_write_full_test_set(tmp_path):
    path = tmp_path / "min.cfg"
    path.write_text("harness.master_seed = 1\n")
    out = tmp_path / "out"
    assert _run("simulate", path, "--out", out) == 0
    assert len(_rows(out / "data" / "test.csv")) == 10_001
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"data/population.csv", "data/test.csv"}
    assert manifest["resolved_defaults"]["dgp_coefficients"] == list(DEFAULT_DGP.coefficients)


def test_simulate_n_test_override(cfg, tmp_path):
    out = tmp_path / "o"
    assert _run("simulate", cfg, "--out", out, "--set", "data.n_test=2000") == 0
    assert len(_rows(out / "data" / "test.csv")) == 2001


def test_malformed_key_exits_one_and_names_key(cfg, tmp_path, capsys):
    assert _run("simulate", cfg, "--out", tmp_path / "o", "--set", "harness.seeed=3") == 1
    assert "harness.seeed" in capsys.readouterr().err


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 1


def test_missing_master_seed(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text("harness.B = 3\n")
    assert _run("simulate", path) == 1
    assert "master_seed" in capsys.readouterr().err


def test_run_without_data_is_a_data_error(cfg, tmp_path, capsys):
    assert _run("run", cfg, "--out", tmp_path / "empty") == 2
    assert "simulate" in capsys.readouterr().err


def test_run_deterministic_fixed_gives_identical_columns(cfg, tmp_path):
    out = tmp_path / "o"
    assert _run("simulate", cfg, "--out", out) == 0
    assert _run("run", cfg, "--out", out) == 0
    rd = out / "runs" / "Log-LBFGS__fixed_train_vary_seed__n300"
    rows = _rows(rd / "predictions.csv")
    assert rows[0] == ["id"] + [f"run_{k:03d}" for k in range(5)]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert values.shape == (400, 5)
    assert np.all(values == values[:, :1])
    assert len(_rows(rd / "run_meta.csv")) == 6
    first = json.loads((out / "manifest.json").read_text())["outputs"]
    assert _run("run", cfg, "--out", out) == 0
    assert json.loads((out / "manifest.json").read_text())["outputs"] == first


def test_run_network_fixed_columns_differ(cfg, tmp_path):
    out = tmp_path / "o"
    sets = ["--set", "model.presets=NN-2L", "--set", "optim.sgd.epochs=2", "--set", "harness.B=3"]
    assert _run("simulate", cfg, "--out", out, *sets) == 0
    assert _run("run", cfg, "--out", out, *sets) == 0
    rows = _rows(out / "runs" / "NN-2L__fixed_train_vary_seed__n300" / "predictions.csv")
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert not np.all(values == values[:, :1])


def test_divergence_exits_three(cfg, tmp_path, capsys):
    out = tmp_path / "o"
    sets = ["--set", "model.presets=NN-1L", "--set", "optim.sgd.learning_rate=1e300", "--set", "optim.sgd.epochs=2"]
    assert _run("simulate", cfg, "--out", out, *sets) == 0
    assert _run("run", cfg, "--out", out, *sets) == 3
    assert "run 0" in capsys.readouterr().err


@pytest.fixture
def lbfgs_run(cfg, tmp_path):
    out = tmp_path / "camp"
    assert _run("simulate", cfg, "--out", out) == 0
    assert _run("run", cfg, "--out", out, "--set", "harness.modes=resample_train, fixed_train_vary_seed") == 0
    return out / "runs"


def test_report_rank_one_matrix_has_zero_epiw(lbfgs_run):
    matrix = lbfgs_run / "Log-LBFGS__fixed_train_vary_seed__n300" / "predictions.csv"
    assert _run("report", matrix) == 0
    rd = matrix.parent / "report"
    binned = _rows(rd / "binned_epiw.csv")
    assert binned[0] == ["bin", "lower", "upper", "count", "mean"]
    populated = [float(r[4]) for r in binned[1:] if r[4] != ""]
    assert populated and all(v == 0.0 for v in populated)
    summary = json.loads((rd / "summary.json").read_text())
    assert summary["stability"]["bin_by"] == "true_risk"
    assert summary["runs_retained"] == 5
    assert len(_rows(rd / "individuals.csv")) == 401
    assert {p.name for p in rd.iterdir()} >= {"binned_edfr.csv", "binned_bias.csv", "binned_mse.csv"}


def test_report_epsilon_zero_refuses_stability(lbfgs_run, capsys):
    matrix = lbfgs_run / "Log-LBFGS__resample_train__n300" / "predictions.csv"
    assert _run("report", matrix, "--epsilon", "0") == 2
    err = capsys.readouterr().err
    assert "retained 1 run" in err
    summary = json.loads((matrix.parent / "report" / "summary.json").read_text())
    assert summary["runs_retained"] == 1 and summary["stability"] is None


def test_report_row_mismatch_is_join_error(lbfgs_run, tmp_path, capsys):
    matrix = lbfgs_run / "Log-LBFGS__resample_train__n300" / "predictions.csv"
    short = generate_population(DEFAULT_DGP, 10, seed=0)
    from riskstab.data import write_dataset_csv

    write_dataset_csv(short, tmp_path / "short.csv")
    assert _run("report", matrix, "--test", tmp_path / "short.csv") == 2
    assert "rows" in capsys.readouterr().err


def test_report_on_ingested_data_bins_by_developed_risk(tmp_path):
    ds = generate_population(DEFAULT_DGP, 700, seed=4)
    cohort = tmp_path / "cohort.csv"
    with open(cohort, "w") as fh:
        fh.write("pid,age,sbp,hr,k,bmi,death\n")
        for i in range(ds.n):
            fh.write(f"{i + 1}," + ",".join(repr(float(v)) for v in ds.features[i]) + f",{ds.labels[i]}\n")
    path = tmp_path / "gusto.cfg"
    path.write_text(
        "harness.master_seed = 2\nharness.B = 3\nharness.n_train = 300\ndata.source = csv\n"
        f"data.csv_path = {cohort}\ndata.feature_columns = age, sbp, hr, k, bmi\ndata.label_column = death\n"
        "data.id_column = pid\ndata.n_test = 200\nmodel.presets = Log-LBFGS\nharness.modes = resample_train\n"
        "metrics.tau = 0.07\n"
    )
    out = tmp_path / "o"
    assert _run("campaign", path, "--out", out) == 0
    rd = out / "runs" / "Log-LBFGS__resample_train__n300" / "report"
    summary = json.loads((rd / "summary.json").read_text())
    assert summary["stability"]["bin_by"] == "developed_risk"
    assert summary["tau"] == 0.07
    assert not (rd / "binned_mse.csv").exists()
    assert (out / "data" / "test.csv").exists()


def _report(run_dir, *extra):
    assert _run("report", run_dir / "predictions.csv", *extra) == 0
    return run_dir / "report"


def test_compare_with_itself_flags_no_difference(lbfgs_run, tmp_path):
    rep = _report(lbfgs_run / "Log-LBFGS__resample_train__n300")
    out = tmp_path / "cmp"
    assert _run("compare", rep, rep, "--out", out) == 0
    rows = _rows(out / "compare_epiw.csv")
    assert rows[0][-2:] == ["most_stable", "spread"]
    assert all(r[-1] in ("", "0.0") for r in rows[1:])


def test_compare_tau_mismatch_warns(lbfgs_run, tmp_path, capsys):
    rs = lbfgs_run / "Log-LBFGS__resample_train__n300"
    fx = lbfgs_run / "Log-LBFGS__fixed_train_vary_seed__n300"
    a = _report(rs)
    b = _report(fx)
    c = rs / "report_tau"
    assert _run("report", rs / "predictions.csv", "--tau", "0.3", "--out", c) == 0
    capsys.readouterr()
    assert _run("compare", a, b, c, "--out", tmp_path / "cmp") == 0
    assert "different thresholds" in capsys.readouterr().err
    rows = _rows(tmp_path / "cmp" / "compare_epiw.csv")
    # the fixed-data LBFGS run has zero width wherever populated
    assert all("fixed_train_vary_seed" in r[-2] for r in rows[1:] if r[-2])


def test_compare_bin_edge_mismatch_is_error(lbfgs_run, tmp_path):
    rs = lbfgs_run / "Log-LBFGS__resample_train__n300"
    a = _report(rs)
    b = rs / "other"
    assert _run("report", rs / "predictions.csv", "--out", b) == 0
    path = b / "binned_epiw.csv"
    rows = _rows(path)
    rows[1][2] = "0.15"
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert _run("compare", a, b, "--out", tmp_path / "cmp") == 2


def test_manifest_config_round_trip(cfg, tmp_path):
    out = tmp_path / "a"
    assert _run("campaign", cfg, "--out", out) == 0
    again = tmp_path / "b"
    assert _run("campaign", out / "manifest.json", "--out", again) == 0
    m1 = json.loads((out / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    assert m1 == m2
    assert "timestamp" not in json.dumps(m1)


def test_compare_flags_logistic_over_network_mid_risk(cfg, tmp_path):
    out = tmp_path / "o"
    sets = ["--set", "model.presets=Log-LBFGS, NN-2L", "--set", "harness.modes=resample_train", "--set", "harness.B=10",
            "--set", "harness.n_train=500", "--set", "data.n_test=1000"]
    assert _run("campaign", cfg, "--out", out, *sets) == 0
    reports = [out / "runs" / f"{p}__resample_train__n500" / "report" for p in ("Log-LBFGS", "NN-2L")]
    assert _run("compare", *reports, "--out", tmp_path / "cmp") == 0
    rows = {r[0]: r for r in _rows(tmp_path / "cmp" / "compare_epiw.csv")[1:]}
    for label in ("[0.3, 0.4)", "[0.4, 0.5)", "[0.5, 0.6)", "[0.6, 0.7)"):
        assert rows[label][-2] == "Log-LBFGS|resample_train|500"
        assert float(rows[label][2]) > float(rows[label][1])
