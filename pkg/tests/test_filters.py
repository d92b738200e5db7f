import numpy as np
import pytest

from assimkit.ensemble_ops import InflationSpec, LocalizationSpec
from assimkit.filters import (
    FilterConfig,
    FilterDegenerateError,
    HMCParams,
    denkf_analysis,
    enkf_analysis,
    etkf_analysis,
    forecast_ensemble,
    hmc_chain,
    hmc_filter_analysis,
    kf_analysis,
    kf_cycle,
    leapfrog_energy_error,
    pf_analysis,
    systematic_resample,
)
from assimkit.la_core import CovarianceError, DenseCovariance, ensemble_covariance_matrix
from assimkit.models import ObservationOperator, integrate, linear_model, lorenz96_model, zero_model
from oracles import grid_posterior

H1 = ObservationOperator(1, (0,))
H2 = ObservationOperator(2, (0, 1))


def standardized(rng, n, dim=1):
    """Ensemble whose sample mean is exactly 0 and sample covariance exactly I."""
    X = rng.normal(size=(n, dim))
    X -= X.mean(axis=0)
    L = np.linalg.cholesky(np.cov(X.T).reshape(dim, dim))
    return X @ np.linalg.inv(L).T


# ---- exact KF -------------------------------------------------------------

def test_kf_scalar():
    xa, A = kf_analysis([0.0], [[1.0]], [1.0], [[1.0]], H1)
    assert xa[0] == pytest.approx(0.5) and A[0, 0] == pytest.approx(0.5)


def test_kf_zero_gain():
    xa, _ = kf_analysis([0.3, -1.2], np.eye(2), [5.0, 5.0], 1e12 * np.eye(2), H2)
    np.testing.assert_allclose(xa, [0.3, -1.2], atol=1e-10)


@pytest.mark.parametrize("H", [H2, ObservationOperator(2, (1,))])
def test_kf_matches_grid_quadrature(H):
    xb = np.array([0.5, -0.3])
    B = np.array([[1.0, 0.6], [0.6, 2.0]])
    R = np.diag([0.5, 0.8])[: H.n_obs, : H.n_obs]
    y = np.array([1.2, 0.4])[: H.n_obs]
    xa, A = kf_analysis(xb, B, y, R, H)
    m, c = grid_posterior(xb, B, y, R, H.indices)
    np.testing.assert_allclose(xa, m, atol=1e-3)
    np.testing.assert_allclose(A, c, atol=1e-3)


def test_kf_singular_innovation():
    with pytest.raises(CovarianceError):
        kf_analysis([0.0], np.zeros((1, 1)), [0.0], np.zeros((1, 1)) + 0.0 * np.eye(1), H1)


def test_kf_cycle_linear_model_exact():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    m = linear_model(A, dt=0.05, observation=H2)
    xb = np.array([1.0, 0.0])
    B = np.eye(2)
    xf, P, xa, Pa = kf_cycle(m, xb, B, [0.5, 0.5], np.eye(2), H2, 0.0, 0.5)
    np.testing.assert_allclose(xf, integrate(m, xb, 0.0, 0.5)[-1])
    # rotation preserves the identity covariance up to the RK4 amplitude error
    np.testing.assert_allclose(P, np.eye(2), atol=1e-5)


# ---- forecast --------------------------------------------------------------

def test_forecast_ensemble():
    m = lorenz96_model()
    rng = np.random.default_rng(0)
    X = 8 + rng.normal(size=(3, 40))
    np.testing.assert_array_equal(forecast_ensemble(m, X, 1.0, 1.0), X)
    np.testing.assert_array_equal(forecast_ensemble(zero_model(40), X, 0.0, 1.0), X)
    np.testing.assert_array_equal(forecast_ensemble(m, X[:1], 0.0, 0.1)[0], integrate(m, X[0], 0.0, 0.1)[-1])


# ---- ensemble filters --------------------------------------------------------

def _linear_gaussian_case(seed=1, n=30):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) @ np.array([[1.0, 0.4], [0.0, 0.8]]) + [1.0, -1.0]
    return X, np.array([0.4, -0.2]), np.diag([0.5, 0.8])


def test_denkf_and_etkf_means_match_kf():
    X, y, R = _linear_gaussian_case()
    xa, A = kf_analysis(X.mean(axis=0), ensemble_covariance_matrix(X), y, R, H2)
    d = denkf_analysis(X, y, R, H2, FilterConfig("denkf"))
    e = etkf_analysis(X, y, R, H2, FilterConfig("etkf"))
    np.testing.assert_allclose(d.analysis_mean, xa, atol=1e-10)
    np.testing.assert_allclose(e.analysis_mean, xa, atol=1e-10)
    np.testing.assert_allclose(ensemble_covariance_matrix(e.analysis), A, atol=1e-8)


def test_denkf_half_gain_anomaly_factor():
    X = standardized(np.random.default_rng(2), 50)
    res = denkf_analysis(X, [0.0], [[1.0]], H1, FilterConfig("denkf"))
    np.testing.assert_allclose(res.analysis - res.analysis_mean, 0.75 * X, atol=1e-12)


def test_denkf_inflates_analysis_anomalies():
    X, y, R = _linear_gaussian_case()
    plain = denkf_analysis(X, y, R, H2, FilterConfig("denkf"))
    infl = denkf_analysis(X, y, R, H2, FilterConfig("denkf", inflation=InflationSpec(1.1)))
    np.testing.assert_allclose(infl.analysis_mean, plain.analysis_mean, atol=1e-13)
    np.testing.assert_allclose(infl.analysis - infl.analysis_mean,
                               1.1 * (plain.analysis - plain.analysis_mean), atol=1e-13)


def test_etkf_rejects_localization():
    X, y, R = _linear_gaussian_case()
    with pytest.raises(ValueError):
        etkf_analysis(X, y, R, H2, FilterConfig("etkf", localization=LocalizationSpec(1.0)))


def test_enkf_matches_kf_large_ensemble():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(100_000, 1))
    xa, A = kf_analysis(X.mean(axis=0), ensemble_covariance_matrix(X), [1.0], [[1.0]], H1)
    res = enkf_analysis(X, [1.0], [[1.0]], H1, FilterConfig("enkf"), np.random.default_rng(4))
    assert abs(res.analysis_mean[0] - xa[0]) < 0.02 * abs(xa[0])
    assert abs(res.analysis.var(ddof=1) - A[0, 0]) < 0.02 * A[0, 0]


def test_enkf_deterministic_given_seed():
    X, y, R = _linear_gaussian_case()
    a = enkf_analysis(X, y, R, H2, FilterConfig("enkf"), np.random.default_rng(5)).analysis
    b = enkf_analysis(X, y, R, H2, FilterConfig("enkf"), np.random.default_rng(5)).analysis
    assert np.array_equal(a, b)


def test_pf_examples():
    rng = np.random.default_rng(6)
    same = np.tile([[1.0, 2.0]], (10, 1))
    res = pf_analysis(same, [0.0, 0.0], np.eye(2), H2, FilterConfig("pf"), rng)
    np.testing.assert_array_equal(res.analysis, same)
    np.testing.assert_allclose(res.diagnostics["weights"], 0.1)

    X = np.array([[0.0, 0.0], [5.0, 5.0], [-5.0, 4.0], [9.0, -3.0]])
    res = pf_analysis(X, [0.0, 0.0], 1e-4 * np.eye(2), H2, FilterConfig("pf"), rng)
    np.testing.assert_array_equal(res.analysis, np.zeros((4, 2)))
    assert res.diagnostics["effective_sample_size"] == pytest.approx(1.0)


def test_pf_matches_kf_large_ensemble():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(100_000, 1))
    xa, _ = kf_analysis(X.mean(axis=0), ensemble_covariance_matrix(X), [1.0], [[1.0]], H1)
    res = pf_analysis(X, [1.0], [[1.0]], H1, FilterConfig("pf"), np.random.default_rng(8))
    assert abs(res.analysis_mean[0] - xa[0]) < 0.02 * abs(xa[0])


def test_pf_degenerate():
    X = np.array([[0.0], [1.0]])
    with pytest.raises(FilterDegenerateError, match="degenerate"):
        # squared misfit overflows to +inf, so every log-weight is -inf
        pf_analysis(X, [1e200], [[1e-300]], H1, FilterConfig("pf"), np.random.default_rng(0))


def test_systematic_resample_counts():
    rng = np.random.default_rng(9)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    for _ in range(20):
        counts = np.bincount(systematic_resample(w, rng, 100), minlength=4)
        assert np.all(np.abs(counts - 100 * w) <= 1)


@pytest.mark.parametrize("alg", ["enkf", "denkf", "etkf", "pf"])
def test_zero_gain_limit(alg):
    rng = np.random.default_rng(10)
    X = 5.0 + rng.normal(size=(20, 6))
    H = ObservationOperator.every(6, 2)
    R = 1e12 * np.eye(3)
    res = {
        "enkf": enkf_analysis, "denkf": denkf_analysis, "etkf": etkf_analysis, "pf": pf_analysis,
    }[alg](X, np.zeros(3), R, H, FilterConfig(alg), np.random.default_rng(11))
    xf = X.mean(axis=0)
    assert np.linalg.norm(res.analysis_mean - xf) <= 1e-6 * np.linalg.norm(xf)
    assert res.analysis.shape == X.shape


def test_zero_gain_limit_hmc_is_statistical():
    # a sampler returns draws from the (prior-dominated) posterior, so its mean can only
    # match the forecast mean up to Monte-Carlo error
    rng = np.random.default_rng(10)
    X = 5.0 + rng.normal(size=(400, 6))
    H = ObservationOperator.every(6, 2)
    cfg = FilterConfig("hmc", hmc=HMCParams(step_size=0.3, n_steps=5, burn_in=100))
    res = hmc_filter_analysis(X, np.zeros(3), 1e12 * np.eye(3), H, cfg, np.random.default_rng(11))
    assert res.analysis.shape == X.shape
    se = np.array([_batch_means_se(res.analysis[:, j], 20) for j in range(6)])
    assert np.all(np.abs(res.analysis_mean - X.mean(axis=0)) < 4 * se)


@pytest.mark.parametrize("alg", ["enkf", "denkf"])
def test_localized_filters_on_lorenz96_shapes(alg):
    rng = np.random.default_rng(12)
    X = 8 + rng.normal(size=(10, 40))
    H = ObservationOperator.every(40, 2)
    cfg = FilterConfig(alg, localization=LocalizationSpec(4.0, period=40))
    res = (enkf_analysis if alg == "enkf" else denkf_analysis)(X, rng.normal(size=20) + 8, np.eye(20), H, cfg, rng)
    assert res.analysis.shape == X.shape and np.all(np.isfinite(res.analysis))


# ---- HMC -------------------------------------------------------------------

def test_hmc_zero_step_is_stationary():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(8, 3))
    cfg = FilterConfig("hmc", hmc=HMCParams(step_size=0.0, n_steps=3, burn_in=5))
    res = hmc_filter_analysis(X, [0.1, 0.2, 0.3], np.eye(3), ObservationOperator(3, (0, 1, 2)), cfg, rng)
    np.testing.assert_array_equal(res.analysis, np.tile(X.mean(axis=0), (8, 1)))
    assert 0 < res.diagnostics["acceptance_rate"] <= 1


def test_hmc_zero_variance_rejected():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(CovarianceError):
        hmc_filter_analysis(X, [0.0, 0.0], np.eye(2), H2, FilterConfig("hmc"), np.random.default_rng(0))


def _batch_means_se(x, n_batches=50):
    b = x[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return b.std(ddof=1) / np.sqrt(n_batches)


def test_hmc_scalar_posterior_long_chain():
    X = standardized(np.random.default_rng(14), 100_000)
    cfg = FilterConfig("hmc", hmc=HMCParams(step_size=0.4, n_steps=4, burn_in=200))
    res = hmc_filter_analysis(X, [1.0], [[1.0]], H1, cfg, np.random.default_rng(15))
    xa, A = kf_analysis([0.0], [[1.0]], [1.0], [[1.0]], H1)
    chain = res.analysis[:, 0]
    assert abs(chain.mean() - xa[0]) < 3 * _batch_means_se(chain)
    assert abs(chain.var() - A[0, 0]) < 0.05 * A[0, 0]
    assert 0 < res.diagnostics["acceptance_rate"] <= 1


def test_leapfrog_energy_error_is_second_order():
    U = lambda x: 0.5 * float(x @ x)  # noqa: E731
    g = lambda x: x  # noqa: E731
    x0, p0, im = np.array([1.0, -0.5]), np.array([0.5, 0.3]), np.ones(2)
    errs = [leapfrog_energy_error(g, U, x0, p0, im, h, int(round(1.0 / h))) for h in (0.1, 0.05, 0.025)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.5 < r < 4.5 for r in ratios), ratios


def test_hmc_chain_gaussian_target():
    prec = np.array([1.0, 4.0])
    U = lambda x: 0.5 * float(np.sum(prec * x * x))  # noqa: E731
    g = lambda x: prec * x  # noqa: E731
    s, acc = hmc_chain(g, U, np.zeros(2), 1 / prec, 20_000, HMCParams(0.5, 5, 100), np.random.default_rng(16))
    np.testing.assert_allclose(s.var(axis=0), 1 / prec, rtol=0.05)
    assert 0.5 < acc <= 1
