"""Fast end-to-end checks behind `assimkit selftest` and `assimkit gradcheck`."""

from __future__ import annotations

import mpmath
import numpy as np
from scipy import stats

from .config import ExperimentConfig, load_config
from .ensemble_ops import gaspari_cohn
from .error_models import GaussianErrorModel, make_rng
from .filters import FilterConfig, denkf_analysis, etkf_analysis, kf_analysis
from .harness import build_model, run_experiment, spun_up_truth
from .la_core import DiagonalCovariance, ensemble_covariance_matrix
from .metrics import RankHistogram, fit_beta, kl_beta, kl_beta_to_uniform, ranks_of_truth
from .models import ObservationOperator
from .variational import VarProblem, WindowObservation, climatological_variance, componentwise_gradient_check, fourdvar_cost_grad


def fourdvar_problem(cfg: ExperimentConfig, window_steps: int = 10, n_obs_times: int = 2):
    model = build_model(cfg)
    H = model.observation
    rng = make_rng(cfg.seed, "gradcheck")
    x_true = spun_up_truth(cfg, model)
    B = DiagonalCovariance(climatological_variance(model, x_true, 2000, every=10))
    xb = x_true + B.sqrt_apply(0.1 * rng.standard_normal(model.n_state))
    obs_steps = np.linspace(0, window_steps, n_obs_times + 1)[1:].round().astype(int)
    R = GaussianErrorModel.isotropic(H.n_obs, cfg.obs_error_std)
    obs = []
    x, k_prev = x_true, 0
    for k in obs_steps:
        x = model.propagate(x, int(k - k_prev))
        k_prev = k
        obs.append(WindowObservation(k * model.dt, H.apply(x) + R.sample(rng), R, H))
    return VarProblem(xb, B, model, 0.0, window_steps * model.dt, obs), x_true


def fourdvar_gradient_error(cfg: ExperimentConfig, window_steps: int = 10, n_obs_times: int = 2) -> float:
    p, x_true = fourdvar_problem(cfg, window_steps, n_obs_times)
    x0 = 0.5 * (p.xb + x_true)
    return componentwise_gradient_check(lambda x: fourdvar_cost_grad(p, x), x0, eps=1e-5)


def _check_kf_denkf_etkf():
    rng = np.random.default_rng(7)
    H = ObservationOperator(2, (0, 1))
    R = np.array([0.5, 0.8])
    X = rng.standard_normal((30, 2)) @ np.array([[1.0, 0.3], [0.0, 0.7]]) + [1.0, -1.0]
    y = np.array([0.4, -0.2])
    xa, _ = kf_analysis(X.mean(axis=0), ensemble_covariance_matrix(X), y, R, H)
    cfg = FilterConfig("denkf")
    e1 = np.abs(denkf_analysis(X, y, R, H, cfg).analysis_mean - xa).max()
    e2 = np.abs(etkf_analysis(X, y, R, H, FilterConfig("etkf")).analysis_mean - xa).max()
    return max(e1, e2)


def kl_beta_quadrature(a: float, b: float) -> float:
    """KL(Beta(a, b) || U(0, 1)) = integral of p ln p, by tanh-sinh quadrature at 30 digits."""
    with mpmath.workdps(30):
        a, b = mpmath.mpf(a), mpmath.mpf(b)
        log_norm = mpmath.log(mpmath.beta(a, b))

        def integrand(t):
            logp = (a - 1) * mpmath.log(t) + (b - 1) * mpmath.log1p(-t) - log_norm
            return mpmath.exp(logp) * logp

        return float(mpmath.quad(integrand, [0, 0.5, 1]))


def _check_kl():
    grid = (0.5, 1.0, 2.0, 5.0, 10.0)
    return max(abs(kl_beta_quadrature(a, b) - kl_beta(a, b)) for a in grid for b in grid)


def _check_ranks(trials: int = 100_000, n_ens: int = 20):
    rng = np.random.default_rng(11)
    draws = rng.standard_normal((n_ens + 1, trials))
    ranks = ranks_of_truth(draws[0], draws[1:], rng)
    hist = RankHistogram.from_ranks(ranks, n_ens)
    p = stats.chisquare(hist.counts).pvalue
    return kl_beta_to_uniform(fit_beta(hist)), p


def run_selftest(quick: bool = True) -> list:
    out = []
    err = _check_kf_denkf_etkf()
    out.append(("DEnKF/ETKF mean equals KF under ensemble B", err < 1e-10, f"max abs diff {err:.2e}"))

    cfg = load_config("lorenz96_denkf_benchmark")
    g = fourdvar_gradient_error(cfg)
    out.append(("4D-Var adjoint gradient vs central differences", g < 1e-6, f"max rel err {g:.2e}"))

    k = _check_kl()
    out.append(("Beta KL closed form vs quadrature", k < 1e-8, f"max abs diff {k:.2e}"))

    kl, p = _check_ranks()
    out.append(("exchangeable rank histogram is uniform", kl < 0.01 and p > 0.01, f"KL {kl:.2e}, chi2 p {p:.3f}"))

    gc = [gaspari_cohn(0.0, 4.0), gaspari_cohn(8.0, 4.0)]
    jump = abs(gaspari_cohn(4.0 - 1e-13, 4.0) - gaspari_cohn(4.0 + 1e-13, 4.0))
    out.append(("Gaspari-Cohn GC(0)=1, GC(2c)=0, continuous at c",
                gc[0] == 1.0 and gc[1] == 0.0 and jump < 1e-12, f"jump at c {jump:.1e}"))

    if not quick:
        s = run_experiment(cfg)
        ok = s.avg_analysis_rmse < 0.65 and s.avg_analysis_rmse < s.avg_free_run_rmse / 3
        out.append(("Lorenz-96 DEnKF benchmark converges", ok,
                    f"RMSE {s.avg_analysis_rmse:.3f}, free run {s.avg_free_run_rmse:.3f}"))
    return out
