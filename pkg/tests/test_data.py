import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskstab.data import (
    DEFAULT_DGP,
    CsvSchema,
    DgpSpec,
    RiskDataset,
    apply_scaler,
    fit_scaler,
    generate_population,
    load_csv,
    polynomial_expand,
    read_dataset_csv,
    subsample,
    true_risk,
    write_dataset_csv,
)
from riskstab.errors import (
    ConfigurationError,
    DegenerateFeatureError,
    ParseError,
    SizeError,
)
from riskstab.models import get_preset, param_count


def test_all_zero_dgp_gives_half():
    dgp = DgpSpec((0, 0, 0, 0, 0, 0), n_signal=0, n_noise=5)
    ds = generate_population(dgp, 100, seed=1)
    assert np.all(ds.true_risk == 0.5)


def test_default_dgp_structure():
    assert DEFAULT_DGP.n_signal == 3 and DEFAULT_DGP.n_noise == 2
    assert DEFAULT_DGP.d == 5


def test_default_dgp_prevalence_and_bayes_accuracy():
    ds = generate_population(DEFAULT_DGP, 1_000_000, seed=7)
    assert 0.48 <= ds.labels.mean() <= 0.56
    bayes = np.mean(np.maximum(ds.true_risk, 1 - ds.true_risk))
    assert 0.72 <= bayes <= 0.76


def test_label_frequency_tracks_true_risk():
    ds = generate_population(DEFAULT_DGP, 100_000, seed=3)
    assert abs(ds.labels.mean() - ds.true_risk.mean()) < 0.01


def test_generation_is_deterministic():
    a = generate_population(DEFAULT_DGP, 500, seed=42)
    b = generate_population(DEFAULT_DGP, 500, seed=42)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert a.true_risk.tobytes() == b.true_risk.tobytes()
    c = generate_population(DEFAULT_DGP, 500, seed=43)
    assert not np.array_equal(a.features, c.features)


@pytest.mark.parametrize(
    "coefs, n_signal, n_noise",
    [
        ((0.1, 1.0, 0.0), 2, 0),
        ((0.1, 1.0, 0.0), 1, 2),
        ((0.1, 1.0, 2.0), 1, 1),
    ],
)
def test_invalid_dgp(coefs, n_signal, n_noise):
    with pytest.raises(ConfigurationError):
        DgpSpec(coefs, n_signal, n_noise)


def test_true_risk_values():
    dgp = DgpSpec((0, 1, 0, 0, 0, 0), 1, 4)
    assert true_risk(np.zeros(5), dgp) == 0.5
    assert true_risk([1, 0, 0, 0, 0], dgp) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert true_risk([1, 0, 0, 0, 0], dgp) == pytest.approx(0.731059, abs=1e-6)


def test_true_risk_monotone_in_intercept_and_below_one():
    x = np.zeros(5)
    values = [true_risk(x, DgpSpec((b0, 1, 0, 0, 0, 0), 1, 4)) for b0 in (-5, 0, 5, 20, 30)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] < 1.0


def test_subsample_full_is_permutation():
    ds = generate_population(DEFAULT_DGP, 200, seed=1)
    sub = subsample(ds, 200, seed=5)
    assert sorted(sub.ids) == sorted(ds.ids)
    assert not np.array_equal(sub.ids, ds.ids)


def test_subsample_deterministic_and_distinct():
    ds = generate_population(DEFAULT_DGP, 1000, seed=1)
    a = subsample(ds, 300, seed=9)
    b = subsample(ds, 300, seed=9)
    assert np.array_equal(a.ids, b.ids)
    assert len(set(a.ids)) == 300
    rows = {int(i): k for k, i in enumerate(ds.ids)}
    k = [rows[int(i)] for i in a.ids]
    assert np.array_equal(a.features, ds.features[k])
    assert np.array_equal(a.labels, ds.labels[k])


def test_subsample_too_large():
    ds = generate_population(DEFAULT_DGP, 10, seed=1)
    with pytest.raises(SizeError):
        subsample(ds, 11, seed=0)


def test_subsample_overlap_matches_hypergeometric_expectation():
    # E[overlap] of two independent 500-of-N draws is 500^2 / N.
    n = 100_000
    ds = RiskDataset(np.zeros((n, 1)), np.zeros(n), np.arange(n), provenance="ingested")
    overlaps = [
        len(np.intersect1d(subsample(ds, 500, 2 * s).ids, subsample(ds, 500, 2 * s + 1).ids))
        for s in range(200)
    ]
    expected = 500**2 / n
    sd_of_mean = math.sqrt(expected / 200)
    assert abs(np.mean(overlaps) - expected) < 4 * sd_of_mean


def test_subsample_complementary_union():
    ds = generate_population(DEFAULT_DGP, 50, seed=1)
    sub = subsample(ds, 20, seed=2)
    rest = ds.take([k for k, i in enumerate(ds.ids) if i not in set(sub.ids)])
    assert sorted(np.concatenate([sub.ids, rest.ids])) == list(ds.ids)


def test_scaler_standardizes_training_data():
    ds = generate_population(DEFAULT_DGP, 300, seed=4)
    scaler = fit_scaler(ds)
    z = apply_scaler(scaler, ds).features
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0, ddof=1) - 1) < 1e-9)


def test_scaler_sample_sd_convention():
    ds = RiskDataset(np.array([[-1.0], [1.0]]), np.array([0, 1]), np.arange(2), provenance="ingested")
    z = apply_scaler(fit_scaler(ds), ds).features[:, 0]
    # sample SD of {-1, 1} is sqrt(2)
    np.testing.assert_allclose(z, [-1 / math.sqrt(2), 1 / math.sqrt(2)], rtol=1e-15)


def test_scaler_rejects_constant_column():
    x = np.column_stack([np.arange(5.0), np.full(5, 0.1)])
    ds = RiskDataset(x, np.array([0, 1, 0, 1, 0]), np.arange(5), provenance="ingested", feature_names=("a", "b"))
    with pytest.raises(DegenerateFeatureError) as err:
        fit_scaler(ds)
    assert err.value.column == "b"


def test_scaler_uses_training_statistics_only():
    train = generate_population(DEFAULT_DGP, 100, seed=1)
    other = generate_population(DEFAULT_DGP, 100, seed=2)
    s = fit_scaler(train)
    np.testing.assert_array_equal(apply_scaler(s, other).features, (other.features - s.means) / s.std_devs)


def test_polynomial_expand_examples():
    np.testing.assert_array_equal(polynomial_expand(np.array([[3.0]])), [[3.0, 9.0]])
    a, b = 2.0, 5.0
    np.testing.assert_array_equal(polynomial_expand(np.array([[a, b]])), [[a, b, a * a, a * b, b * b]])


def test_polynomial_expand_d5_gives_21_params():
    assert polynomial_expand(np.zeros((1, 5))).shape[1] == 20
    assert param_count(get_preset("Log-Poly"), 5) == 21


def test_polynomial_expand_degree_guard():
    with pytest.raises(ConfigurationError):
        polynomial_expand(np.zeros((1, 2)), degree=3)


@given(st.integers(min_value=1, max_value=20))
@settings(max_examples=20, deadline=None)
def test_polynomial_column_count(d):
    assert polynomial_expand(np.ones((2, d))).shape[1] == d + d * (d + 1) // 2


# ---------------------------------------------------------------- CSV


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_basic(tmp_path):
    p = _write(tmp_path, "x1,x2,y\n1.0,2.0,0\n3,4,1\n5.5,-1,1\n")
    ds = load_csv(p, CsvSchema(("x1", "x2"), "y"))
    assert (ds.n, ds.d) == (3, 2)
    assert ds.provenance == "ingested" and ds.true_risk is None
    np.testing.assert_array_equal(ds.ids, [0, 1, 2])


def test_load_csv_non_binary_label(tmp_path):
    p = _write(tmp_path, "x1,y\n1,0\n2,2\n")
    with pytest.raises(ParseError) as err:
        load_csv(p, CsvSchema(("x1",), "y"))
    assert err.value.row == 1 and err.value.column == "y"


def test_load_csv_missing_column(tmp_path):
    p = _write(tmp_path, "x1,y\n1,0\n")
    with pytest.raises(ParseError, match="missing column 'x2'"):
        load_csv(p, CsvSchema(("x1", "x2"), "y"))


def test_load_csv_non_numeric_cell(tmp_path):
    p = _write(tmp_path, "x1,y\n1,0\nabc,1\n")
    with pytest.raises(ParseError) as err:
        load_csv(p, CsvSchema(("x1",), "y"))
    assert (err.value.row, err.value.column) == (1, "x1")


@pytest.mark.parametrize("text", ["", "x1,y\n"])
def test_load_csv_empty(tmp_path, text):
    p = _write(tmp_path, text)
    with pytest.raises(ParseError):
        load_csv(p, CsvSchema(("x1",), "y"))


def test_load_csv_eight_features_gives_log_g_nine_params(tmp_path):
    cols = [f"f{j}" for j in range(8)]
    rows = [",".join(cols + ["dead"])] + [",".join([str(i + j) for j in range(8)] + [str(i % 2)]) for i in range(4)]
    p = _write(tmp_path, "\n".join(rows) + "\n")
    ds = load_csv(p, CsvSchema(tuple(cols), "dead"))
    assert param_count(get_preset("Log-G"), ds.d) == 9


def test_dataset_csv_round_trip(tmp_path):
    ds = generate_population(DEFAULT_DGP, 50, seed=2)
    path = tmp_path / "pop.csv"
    write_dataset_csv(ds, path)
    back = read_dataset_csv(path)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.true_risk.tobytes() == ds.true_risk.tobytes()
    assert np.array_equal(back.labels, ds.labels) and np.array_equal(back.ids, ds.ids)
    assert path.read_text().splitlines()[0] == "id,x1,x2,x3,x4,x5,y,true_risk"


def test_dataset_invariants():
    with pytest.raises(ParseError):
        RiskDataset(np.zeros((2, 1)), np.array([0, 2]), np.arange(2))
    with pytest.raises(ParseError):
        RiskDataset(np.zeros((2, 1)), np.array([0, 1]), np.array([3, 3]))
    with pytest.raises(ParseError):
        RiskDataset(np.zeros((2, 1)), np.array([0, 1]), np.arange(2), true_risk=np.array([0.5, 1.0]))
    ds = generate_population(DEFAULT_DGP, 5, seed=0)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
