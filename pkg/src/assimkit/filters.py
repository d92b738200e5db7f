"""
Single-cycle analysis schemes.

    kf_analysis           exact Kalman filter update with explicit covariances
    enkf_analysis         perturbed-observation EnKF (Burgers et al. 1998)
    denkf_analysis        deterministic EnKF, half-gain anomaly update (Sakov & Oke 2008)
    etkf_analysis         ensemble transform Kalman filter (Bishop et al. 2001)
    pf_analysis           bootstrap particle filter with systematic resampling
    hmc_filter_analysis   Hamiltonian Monte-Carlo sampling filter

Every ensemble scheme takes a forecast ensemble of shape (n_ens, n_state), the
observation vector, the observation error model (or covariance), the observation
operator and a `FilterConfig`, and returns an `AnalysisResult`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .ensemble_ops import InflationSpec, LocalizationSpec, inflate, localize_obs_space
from .error_models import GaussianErrorModel
from .la_core import CovarianceError, DenseCovariance, as_covariance, as_ensemble
from .models import Model, ObservationOperator, integrate, steps_between

ALGORITHMS = ("kf", "enkf", "denkf", "etkf", "pf", "hmc")


class FilterDegenerateError(RuntimeError):
    pass


@dataclass(frozen=True)
class HMCParams:
    step_size: float = 0.05
    n_steps: int = 10
    burn_in: int = 50

    def __post_init__(self):
        if self.step_size < 0 or self.n_steps < 1 or self.burn_in < 0:
            raise ValueError("HMC needs step_size >= 0, n_steps >= 1, burn_in >= 0")


@dataclass(frozen=True)
class FilterConfig:
    algorithm: str = "denkf"
    inflation: InflationSpec = field(default_factory=InflationSpec)
    localization: LocalizationSpec | None = None
    hmc: HMCParams = field(default_factory=HMCParams)
    resampling: str = "systematic"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.resampling != "systematic":
            raise ValueError(f"unsupported resampling scheme {self.resampling!r}")
        if isinstance(self.inflation, (int, float)):
            object.__setattr__(self, "inflation", InflationSpec(float(self.inflation)))


@dataclass
class AnalysisResult:
    analysis: np.ndarray
    forecast: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def analysis_mean(self):
        return self.analysis.mean(axis=0)

    @property
    def forecast_mean(self):
        return self.forecast.mean(axis=0)


def forecast_ensemble(model: Model, ens, t0: float, t1: float):
    """Propagate every member from t0 to t1 (perfect model, no additive noise)."""
    X = as_ensemble(ens)
    n = steps_between(t0, t1, model.dt)
    for k in range(n):
        X = model.step(X, t0 + k * model.dt)
    return X


def _obs_cov(R):
    if isinstance(R, GaussianErrorModel):
        return R.covariance
    return as_covariance(R)


def _solve_spd(S, rhs):
    try:
        c = scipy.linalg.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("singular innovation covariance") from exc
    return scipy.linalg.cho_solve(c, rhs)


def kf_analysis(xb, B, y, R, H: ObservationOperator):
    """Kalman update. Returns (xa, A) with A = (I - K H) B as a dense array."""
    xb = np.asarray(xb, dtype=np.float64)
    Bm = np.atleast_2d(as_covariance(B).dense())
    Rm = np.atleast_2d(_obs_cov(R).dense())
    Hm = H.matrix()
    BHt = Bm @ Hm.T
    S = Hm @ BHt + Rm
    K = _solve_spd(S, BHt.T).T
    xa = xb + K @ (np.asarray(y, dtype=np.float64) - H.apply(xb))
    A = (np.eye(xb.size) - K @ Hm) @ Bm
    return xa, 0.5 * (A + A.T)


def _ensemble_gain(Af, R, H: ObservationOperator, cfg: FilterConfig):
    """K = (rho o B H^T)(rho o H B H^T + R)^{-1}, from forecast anomalies Af (n_ens, n_state)."""
    n_ens = Af.shape[0]
    HA = H.apply(Af)
    HB = HA.T @ Af / (n_ens - 1)
    HBHt = HA.T @ HA / (n_ens - 1)
    if cfg.localization is not None:
        HB, HBHt = localize_obs_space(HB, HBHt, cfg.localization, H.indices, H.n_state)
    S = HBHt + np.atleast_2d(_obs_cov(R).dense())
    return _solve_spd(S, HB).T


def _require_members(X, n=2):
    if X.shape[0] < n:
        raise ValueError(f"degenerate ensemble: need at least {n} members")


def _inflated(X, cfg):
    if cfg.inflation.factor == 1.0:
        return X
    return inflate(X, cfg.inflation)


def enkf_analysis(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng: np.random.Generator):
    Xf = as_ensemble(fc)
    _require_members(Xf)
    Rc = _obs_cov(R)
    xf = Xf.mean(axis=0)
    Af = Xf - xf
    K = _ensemble_gain(Af, Rc, H, cfg)
    y = np.asarray(y, dtype=np.float64)
    Y = y + Rc.sqrt_apply(rng.standard_normal((Xf.shape[0], H.n_obs)))
    Xa = Xf + (Y - H.apply(Xf)) @ K.T
    Xa = _inflated(Xa, cfg)
    return AnalysisResult(Xa, Xf, {"innovation_norm": float(np.linalg.norm(y - H.apply(xf)))})


def denkf_analysis(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng=None):
    Xf = as_ensemble(fc)
    _require_members(Xf)
    xf = Xf.mean(axis=0)
    Af = Xf - xf
    K = _ensemble_gain(Af, R, H, cfg)
    d = np.asarray(y, dtype=np.float64) - H.apply(xf)
    xa = xf + K @ d
    Aa = Af - 0.5 * H.apply(Af) @ K.T
    Xa = xa + cfg.inflation.factor * Aa
    return AnalysisResult(Xa, Xf, {"innovation_norm": float(np.linalg.norm(d))})


_EIG_FLOOR = 1e-12


def etkf_analysis(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng=None):
    if cfg.localization is not None:
        raise ValueError("ETKF does not support covariance localization")
    Xf = as_ensemble(fc)
    _require_members(Xf)
    n = Xf.shape[0]
    Rc = _obs_cov(R)
    xf = Xf.mean(axis=0)
    Af = Xf - xf
    Y = H.apply(Af)  # (n_ens, n_obs)
    RiY = Rc.inverse_apply(Y)
    Sinv = np.eye(n) + Y @ RiY.T / (n - 1)
    evals, evecs = np.linalg.eigh(0.5 * (Sinv + Sinv.T))
    if evals.min() <= 0:
        raise CovarianceError("ensemble-space matrix is not SPD")
    evals = np.maximum(evals, _EIG_FLOOR)
    S = (evecs / evals) @ evecs.T
    T = (evecs / np.sqrt(evals)) @ evecs.T
    d = np.asarray(y, dtype=np.float64) - H.apply(xf)
    w = S @ (RiY @ d) / (n - 1)
    xa = xf + w @ Af
    Aa = T @ Af
    Xa = xa + cfg.inflation.factor * Aa
    return AnalysisResult(Xa, Xf, {"innovation_norm": float(np.linalg.norm(d))})


def systematic_resample(weights, rng: np.random.Generator, size: int | None = None):
    """Indices drawn by systematic resampling: one uniform offset, evenly spaced pointers."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.size if size is None else size
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def pf_analysis(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng: np.random.Generator):
    Xf = as_ensemble(fc)
    Rc = _obs_cov(R)
    D = np.asarray(y, dtype=np.float64) - H.apply(Xf)
    logw = -0.5 * np.einsum("ij,ij->i", D, Rc.inverse_apply(D))
    if not np.any(np.isfinite(logw)):
        raise FilterDegenerateError("filter degenerate: all particle weights vanished")
    w = np.exp(logw - logw.max())
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise FilterDegenerateError("filter degenerate: all particle weights vanished")
    w /= total
    ess = 1.0 / np.sum(w**2)
    idx = systematic_resample(w, rng)
    Xa = Xf[idx]
    if Xa.shape[0] >= 2:
        Xa = _inflated(Xa, cfg)
    return AnalysisResult(Xa, Xf, {"effective_sample_size": float(ess), "weights": w})


def hmc_chain(grad_potential, potential, x0, inv_mass, n_samples, params: HMCParams, rng):
    """Leapfrog HMC with diagonal mass matrix M = diag(1/inv_mass).

    Returns (samples (n_samples, n), acceptance_rate). The first `params.burn_in`
    states are discarded.
    """
    x = np.array(x0, dtype=np.float64)
    n = x.size
    inv_mass = np.asarray(inv_mass, dtype=np.float64)
    sqrt_mass = 1.0 / np.sqrt(inv_mass)
    h, L = params.step_size, params.n_steps
    U = potential(x)
    g = grad_potential(x)
    total = params.burn_in + n_samples
    out = np.empty((n_samples, n))
    accepted = 0
    for it in range(total):
        p = sqrt_mass * rng.standard_normal(n)
        H0 = U + 0.5 * np.dot(p * inv_mass, p)
        xn, gn = x, g
        pn = p - 0.5 * h * gn
        for k in range(L):
            xn = xn + h * inv_mass * pn
            gn = grad_potential(xn)
            if k < L - 1:
                pn = pn - h * gn
        pn = pn - 0.5 * h * gn
        Un = potential(xn)
        H1 = Un + 0.5 * np.dot(pn * inv_mass, pn)
        if np.isfinite(H1) and np.log(rng.random()) < H0 - H1:
            x, g, U = xn, gn, Un
            accepted += 1
        if it >= params.burn_in:
            out[it - params.burn_in] = x
    return out, accepted / total


def leapfrog_energy_error(grad_potential, potential, x0, p0, inv_mass, step_size, n_steps):
    """|H(end) - H(start)| for one leapfrog trajectory; used to check second-order accuracy."""
    inv_mass = np.asarray(inv_mass, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    H0 = potential(x) + 0.5 * np.dot(p * inv_mass, p)
    p = p - 0.5 * step_size * grad_potential(x)
    for k in range(n_steps):
        x = x + step_size * inv_mass * p
        if k < n_steps - 1:
            p = p - step_size * grad_potential(x)
    p = p - 0.5 * step_size * grad_potential(x)
    return abs(potential(x) + 0.5 * np.dot(p * inv_mass, p) - H0)


def hmc_filter_analysis(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng: np.random.Generator):
    """Sample exp(-J) with J = ½|x - xf|²_{B^-1} + ½|y - Hx|²_{R^-1} by HMC.

    B is the diagonal of the (inflated) forecast ensemble variance. The chain starts
    at the forecast mean and the last n_ens states form the analysis ensemble.
    """
    Xf = as_ensemble(fc)
    _require_members(Xf)
    Xb = _inflated(Xf, cfg)
    xf = Xb.mean(axis=0)
    var = Xb.var(axis=0, ddof=1)
    if np.any(var <= 0):
        raise CovarianceError("zero ensemble variance in at least one coordinate")
    Rc = _obs_cov(R)
    y = np.asarray(y, dtype=np.float64)

    def potential(x):
        d = y - H.apply(x)
        return 0.5 * float(np.sum((x - xf) ** 2 / var)) + 0.5 * float(d @ Rc.inverse_apply(d))

    def grad(x):
        return (x - xf) / var - H.adjoint(Rc.inverse_apply(y - H.apply(x)))

    # mass = B^{-1}, so inverse mass = ensemble variance
    samples, acc = hmc_chain(grad, potential, xf, var, Xf.shape[0], cfg.hmc, rng)
    return AnalysisResult(samples, Xf, {"acceptance_rate": acc})


_DISPATCH = {
    "enkf": enkf_analysis,
    "denkf": denkf_analysis,
    "etkf": etkf_analysis,
    "pf": pf_analysis,
    "hmc": hmc_filter_analysis,
}


def analyze(fc, y, R, H: ObservationOperator, cfg: FilterConfig, rng: np.random.Generator):
    """Run the ensemble scheme named by `cfg.algorithm`."""
    try:
        fn = _DISPATCH[cfg.algorithm]
    except KeyError:
        raise ValueError(f"{cfg.algorithm!r} is not an ensemble algorithm") from None
    return fn(fc, y, R, H, cfg, rng)


def kf_cycle(model: Model, xb, B, y, R, H, t0: float, t1: float):
    """Exact-KF forecast of (mean, covariance) through a linear model, then analysis.

    The covariance is propagated column-by-column with the tangent-linear of the
    discrete scheme, so for a linear model this is exact.
    """
    traj = integrate(model, xb, t0, t1)
    Bm = np.atleast_2d(as_covariance(B).dense())
    P = Bm
    for x in traj[:-1]:
        M = np.stack([model.tlm_step(x, e) for e in np.eye(model.n_state)], axis=1)
        P = M @ P @ M.T
    xa, A = kf_analysis(traj[-1], DenseCovariance(0.5 * (P + P.T)), y, R, H)
    return traj[-1], P, xa, A
