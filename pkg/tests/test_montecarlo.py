import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from quasibayes.errors import InvalidArgumentError
from quasibayes.montecarlo import (
    ReplicationSpec,
    format_table,
    gen_censored_ex1,
    gen_conjugate,
    gen_ivqr_ex2,
    ols,
    replicate,
    run_replications,
    summarize,
    write_table,
)
from quasibayes.sampler import make_rng

N_BIG = 100_000


def _censoring_probability():
    # P(Y* <= 0) = E_{X1} Phi((6 - 3 X1) / sqrt(18 + X1^4))
    f = lambda x: norm.cdf((6 - 3 * x) / np.sqrt(18 + x ** 4)) * norm.pdf(x)
    return quad(f, -np.inf, np.inf)[0]


def test_censoring_fraction_matches_design():
    data = gen_censored_ex1(N_BIG, make_rng(1))
    p = _censoring_probability()
    assert abs(np.mean(data["y"] == 0.0) - p) < 4 * np.sqrt(p * (1 - p) / N_BIG)


@pytest.mark.xfail(strict=True, reason="stated design censors about 87%, not 40%; see notes")
def test_censoring_fraction_reported_band():
    data = gen_censored_ex1(N_BIG, make_rng(1))
    assert 0.38 <= np.mean(data["y"] == 0.0) <= 0.42


def test_censored_regressor_marginals():
    data = gen_censored_ex1(N_BIG, make_rng(2))
    for name in ("x1", "x2", "x3"):
        x = data[name]
        assert abs(x.mean()) < 4 / np.sqrt(N_BIG)
        assert x.var() == pytest.approx(1.0, abs=0.02)


def test_ivqr_design_properties():
    data = gen_ivqr_ex2(N_BIG, make_rng(4))
    D = data.matrix(["d1", "d2", "d3"])
    np.testing.assert_allclose(np.median(D, axis=0), 1.0, atol=0.02)
    sigma = (1 + D.sum(axis=1)) / 5
    assert np.all(sigma > 0.2)
    # conditional median of Y is zero within bins of D
    edges = np.quantile(D[:, 0], np.linspace(0, 1, 6))
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (D[:, 0] >= lo) & (D[:, 0] <= hi)
        y = data["y"][sel]
        assert abs(np.mean(y <= 0) - 0.5) < 4 * 0.5 / np.sqrt(sel.sum())


def test_conjugate_design_shape():
    data = gen_conjugate(50, make_rng(0))
    assert data.names == ["y1", "y2"] and data.n == 50


def test_ols_exact_fit():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    np.testing.assert_allclose(ols(X, 2 + 3 * np.arange(5.0)), [2.0, 3.0], atol=1e-6)


def test_summarize_hand_values():
    truth = np.array([0.0, 1.0])
    perfect = summarize(np.tile(truth, (6, 1)), truth)
    assert all(v == 0.0 for v in perfect.values())
    alt = np.array([[1.0, 2.0], [-1.0, 0.0], [1.0, 2.0], [-1.0, 0.0]])
    m = summarize(alt, truth)
    assert m["rmse"] == pytest.approx(1.0)
    assert m["mean_bias"] == pytest.approx(0.0)
    assert m["median_bias"] in (-1.0, 1.0)
    assert m["mad"] == pytest.approx(1.0)
    single = summarize(np.array([[0.3, 0.6]]), truth, coords=[1])
    assert single["rmse"] == pytest.approx(abs(single["mean_bias"]))
    assert single["rmse"] == pytest.approx(0.4)


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        ReplicationSpec("unknown", 100)
    with pytest.raises(InvalidArgumentError):
        ReplicationSpec("ivqr-ex2", 100, R=0)
    assert ReplicationSpec("censored-ex1", 100).adapt_every == 200
    assert ReplicationSpec("ivqr-ex2", 100).adapt_every == 100


def test_conjugate_smoke_under_a_minute():
    t0 = time.perf_counter()
    table = run_replications(ReplicationSpec("conjugate-gaussian", 100, R=10, n_keep=1000,
                                             n_burn=500))
    assert time.perf_counter() - t0 < 60
    assert set(table.intervals) == {"equal-tailed", "symmetric", "sandwich"}
    assert 0.0 <= table.intervals["equal-tailed"]["coverage"] <= 1.0


def test_ivqr_table_columns_and_determinism(tmp_path):
    spec = ReplicationSpec("ivqr-ex2", 200, R=2, n_keep=300, n_burn=300, seed=5)
    a = run_replications(spec)
    text = format_table(a)
    for column in ("RMSE", "MAD", "Mean Bias", "Median Bias", "Median Abs. Dev."):
        assert column in text
    assert "Q-posterior-mean" in text and "Q-posterior-median" in text
    write_table(a, tmp_path / "a")
    write_table(run_replications(spec), tmp_path / "b")
    for name in ("table.txt", "table.json", "estimates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_censored_replication_reports_collapse_flag():
    out = replicate(ReplicationSpec("censored-ex1", 200, R=1, n_keep=300, n_burn=300), 0)
    assert out["collapsed"] is False
    assert len(out["mean"]) == 4
    for j in (1, 2, 3):
        lo, hi = out["intervals"][j]["sandwich"]
        assert lo <= hi


def test_conjugate_quantile_interval_coverage():
    table = run_replications(ReplicationSpec("conjugate-gaussian", 100, R=500, seed=0,
                                             n_keep=2000, n_burn=500))
    assert 0.87 <= table.intervals["equal-tailed"]["coverage"] <= 0.93
