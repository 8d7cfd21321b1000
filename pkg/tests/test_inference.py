import numpy as np
import pytest
from scipy.stats import norm

from quasibayes.core import ParamSpace, Prior, quadratic_criterion
from quasibayes.criteria import MomentFunction, WeightPolicy, gmm_criterion, ivqr_moments
from quasibayes.dataset import Dataset
from quasibayes.errors import InvalidArgumentError
from quasibayes.estimate import batch_means_se, type1_quantile
from quasibayes.inference import (
    Functional,
    j_inverse_from_chain,
    numerical_gradient,
    omega_from_scores,
    omega_gmm,
    powell_scores,
    quantile_interval,
    sandwich_from_chain,
    sandwich_interval,
    var_scores,
)
from quasibayes.criteria import VarModel, powell_criterion
from quasibayes.montecarlo import gen_censored_ex1, gen_ivqr_ex2
from quasibayes.sampler import SamplerConfig, make_rng, run_chain

A = np.array([[2.0, 0.6], [0.6, 1.0]])
THETA = np.array([1.0, -1.0])


def _chain(n_keep, lam=1.0, seed=23):
    c = quadratic_criterion(THETA, A, 100)
    cfg = SamplerConfig(THETA, 0.1, n_keep=n_keep, n_burn=2000, seed=seed, lam=lam)
    return run_chain(cfg, c, Prior.flat(ParamSpace([-10, -10], [10, 10])))


@pytest.fixture(scope="module")
def long_chain():
    return _chain(100_000)


def test_quantile_interval_endpoints(long_chain):
    sd = np.sqrt(np.linalg.inv(A)[0, 0] / 100)
    iv = quantile_interval(long_chain, Functional.coordinate(0), 0.10, information_equality=True)
    se = iv.ingredients["mc_se"]
    assert abs(iv.lo - (THETA[0] - 1.645 * sd)) <= 3 * se[0] + 1e-4
    assert abs(iv.hi - (THETA[0] + 1.645 * sd)) <= 3 * se[1] + 1e-4
    assert iv.information_equality_asserted
    assert iv.level == pytest.approx(0.9)


def test_constant_functional_degenerate(long_chain):
    iv = quantile_interval(long_chain, Functional(lambda t: 4.2), 0.1)
    assert iv.lo == iv.hi == 4.2


def test_j_inverse_recovers_curvature(long_chain):
    J_inv = j_inverse_from_chain(long_chain, n=100)
    target = np.linalg.inv(A)
    assert np.linalg.norm(J_inv - target) / np.linalg.norm(target) < 0.05


def test_j_inverse_degenerate_chain():
    np.testing.assert_array_equal(j_inverse_from_chain(np.ones((50, 2)), n=10), 0.0)


def test_j_inverse_scales_with_lambda():
    j1 = j_inverse_from_chain(_chain(30_000, 1.0, 1), n=100)
    j4 = j_inverse_from_chain(_chain(30_000, 4.0, 2), n=100)
    assert np.linalg.norm(j1 / 4 - j4) / np.linalg.norm(j4) < 0.1


def test_scalar_sandwich_hand_value():
    iv = sandwich_interval([0.0], [[1.0]], [[1.0]], Functional.coordinate(0), 0.10, n=100)
    assert iv.lo == pytest.approx(-0.1 * norm.ppf(0.95))
    assert iv.hi == pytest.approx(0.1 * norm.ppf(0.95))
    assert iv.hi == pytest.approx(0.1645, abs=1e-4)


def test_sandwich_linear_functional_exact():
    c = np.array([0.3, -2.0])
    J_inv = np.array([[1.0, 0.2], [0.2, 0.5]])
    Omega = np.array([[2.0, -0.1], [-0.1, 1.5]])
    iv = sandwich_interval([1.0, 1.0], J_inv, Omega, Functional.linear(c), 0.05, n=4)
    var = c @ J_inv @ Omega @ J_inv @ c
    assert iv.ingredients["se"] == pytest.approx(np.sqrt(var) / 2, rel=1e-14)


def test_information_equality_sandwich_matches_quantile_width(long_chain):
    f = Functional.coordinate(1)
    q = quantile_interval(long_chain, f, 0.10)
    w = sandwich_from_chain(long_chain, A, f, 0.10, n=100)
    assert w.length == pytest.approx(q.length, rel=0.05)


def test_negative_variance_floored():
    with pytest.warns(RuntimeWarning):
        iv = sandwich_interval([0.0], [[1.0]], [[-1.0]], Functional.coordinate(0))
    assert iv.lo == iv.hi == 0.0
    assert iv.warnings


def test_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        sandwich_interval([0.0], [[1.0]], [[1.0]], Functional.coordinate(0), alpha=1.0)
    with pytest.raises(InvalidArgumentError):
        sandwich_interval([0.0, 0.0], [[1.0]], [[1.0]], Functional.coordinate(0))


def test_numerical_gradient_of_smooth_map():
    g = lambda t: np.sin(t[0]) * t[1] ** 2
    t = np.array([0.4, 1.3])
    np.testing.assert_allclose(numerical_gradient(g, t),
                               [np.cos(0.4) * 1.3 ** 2, 2 * np.sin(0.4) * 1.3], rtol=1e-7)


def _linear_iv(n=300, seed=2):
    rng = make_rng(seed)
    z = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    x = np.column_stack([np.ones(n), z[:, 1] + 0.5 * rng.standard_normal(n)])
    y = x @ [0.5, 1.0] + rng.standard_normal(n)
    m = MomentFunction(lambda t: z * (y - x @ t)[:, None], n, 3, instruments=z)
    return m, Dataset({"y": y}), z, x


def test_linear_moments_jacobian_exact():
    m, data, z, x = _linear_iv()
    est = omega_gmm(m, data, [0.3, 0.8], WeightPolicy.identity())
    np.testing.assert_allclose(est.G, -z.T @ x / z.shape[0], rtol=1e-7, atol=1e-10)
    assert not est.rank_deficient


def test_optimal_weight_omega_equals_curvature():
    m, data, z, x = _linear_iv()
    theta = np.array([0.45, 1.05])
    policy = WeightPolicy.optimal_at(theta)
    Omega = omega_gmm(m, data, theta, policy).Omega
    crit = gmm_criterion(m, policy, data, dim=2)
    H = numerical_gradient(lambda t: numerical_gradient(crit, t, 1e-4), theta, 1e-4)
    np.testing.assert_allclose(-H / data.n, Omega, rtol=1e-5)


def test_ivqr_omega_matches_density_form():
    data = gen_ivqr_ex2(5000, make_rng(0))
    Z = data.matrix(["d1", "d2", "d3"], intercept=True)
    sigma = (1.0 + Z[:, 1:].sum(axis=1)) / 5.0
    G = -(Z * (norm.pdf(0.0) / sigma)[:, None]).T @ Z / Z.shape[0]
    W = np.linalg.inv(Z.T @ Z / Z.shape[0]) / 0.25
    target = G.T @ W @ G
    m = ivqr_moments(data, 0.5, d_cols=["d1", "d2", "d3"])
    est = omega_gmm(m, data, np.zeros(4), WeightPolicy.ivqr(0.5), step=0.2).Omega
    assert np.linalg.norm(est - target) / np.linalg.norm(target) < 0.10


def test_outer_product_scores():
    S = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 2.0]])
    np.testing.assert_allclose(omega_from_scores(S), S.T @ S / 3)


def test_powell_scores_zero_for_censored_index():
    data = gen_censored_ex1(200, make_rng(4))
    crit = powell_criterion(data, 0.5, x_cols=["x1", "x2", "x3"])
    scores = powell_scores(crit, data, [-100.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(scores, 0.0)
    s = powell_scores(crit, data, [-6.0, 3.0, 3.0, 3.0])
    assert s.shape == (200, 4)


def test_var_scores_linear_and_recursive_agree_at_zero_rho():
    rng = make_rng(8)
    y = rng.standard_normal(300)
    data = Dataset({"y": y}, layout="time-series")
    lin = VarModel(data, x_cols=["y"], s=50, recursive=False)
    rec = VarModel(data, x_cols=["y"], s=50, recursive=True)
    a = var_scores(lin, 0.5, [0.0, 0.2])
    b = var_scores(rec, 0.5, [0.0, 0.2, 0.0])
    np.testing.assert_allclose(b[:, :2], a, atol=1e-6)


def test_batch_means_quantile_stat_shape(long_chain):
    se = batch_means_se(long_chain.draws[:, 0],
                        lambda v: np.array([type1_quantile(v[:, 0], 0.05)]))
    assert se.shape == (1,) and se[0] > 0
