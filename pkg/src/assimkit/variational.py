"""3D-Var and strong-constraint 4D-Var cost functions, an L-BFGS minimizer and gradient checks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .error_models import GaussianErrorModel
from .la_core import as_covariance
from .models import Model, ObservationOperator, steps_between


@dataclass(frozen=True)
class WindowObservation:
    time: float
    y: np.ndarray
    R: object
    H: ObservationOperator


@dataclass
class VarProblem:
    """Background, window observations and the model that links them.

    Observation times must sit on the model grid inside [t0, t_final].
    """

    xb: np.ndarray
    B: object
    model: Model
    t0: float = 0.0
    t_final: float | None = None
    observations: Sequence[WindowObservation] = field(default_factory=list)

    def __post_init__(self):
        self.xb = np.asarray(self.xb, dtype=np.float64)
        self.B = as_covariance(self.B)
        if self.t_final is None:
            self.t_final = max([self.t0] + [o.time for o in self.observations])
        self._n_steps = steps_between(self.t0, self.t_final, self.model.dt)
        self._obs_at = {}
        for ob in self.observations:
            if not (self.t0 - 1e-12 <= ob.time <= self.t_final + 1e-12):
                raise ValueError(f"observation time {ob.time} outside window [{self.t0}, {self.t_final}]")
            k = steps_between(self.t0, ob.time, self.model.dt)
            self._obs_at.setdefault(k, []).append(ob)


@dataclass
class OptimResult:
    x: np.ndarray
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    costs: list = field(default_factory=list)


def _cov(R):
    return R.covariance if isinstance(R, GaussianErrorModel) else as_covariance(R)


def threedvar_cost_grad(xb, B, y, R, H: ObservationOperator, x):
    """J(x) = ½|x - xb|²_{B^-1} + ½|y - Hx|²_{R^-1} and its gradient."""
    B = as_covariance(B)
    Rc = _cov(R)
    x = np.asarray(x, dtype=np.float64)
    dx = x - np.asarray(xb, dtype=np.float64)
    Bi_dx = B.inverse_apply(dx)
    d = np.asarray(y, dtype=np.float64) - H.apply(x)
    Ri_d = Rc.inverse_apply(d)
    cost = 0.5 * float(dx @ Bi_dx) + 0.5 * float(d @ Ri_d)
    return cost, Bi_dx - H.adjoint(Ri_d)


def fourdvar_cost_grad(p: VarProblem, x0):
    """Strong-constraint 4D-Var cost and adjoint gradient with respect to x0.

    One forward sweep keeps every RK4 state; one reverse sweep runs the discrete
    adjoint and injects H^T R^{-1} (Hx_k - y_k) at each observation step.
    """
    if not p.model.has_adjoint:
        raise ValueError("model provides no tangent-linear/adjoint")
    x0 = np.asarray(x0, dtype=np.float64)
    dx = x0 - p.xb
    Bi_dx = p.B.inverse_apply(dx)
    cost = 0.5 * float(dx @ Bi_dx)

    traj = [x0]
    x = x0
    for k in range(p._n_steps):
        x = p.model.step(x, p.t0 + k * p.model.dt)
        traj.append(x)

    forcing = {}
    for k, obs in p._obs_at.items():
        f = np.zeros_like(x0)
        for ob in obs:
            r = ob.H.apply(traj[k]) - np.asarray(ob.y, dtype=np.float64)
            Ri_r = _cov(ob.R).inverse_apply(r)
            cost += 0.5 * float(r @ Ri_r)
            f = f + ob.H.adjoint(Ri_r)
        forcing[k] = f

    lam = forcing.get(p._n_steps, np.zeros_like(x0))
    for k in range(p._n_steps - 1, -1, -1):
        lam = p.model.adjoint_step(traj[k], lam)
        if k in forcing:
            lam = lam + forcing[k]
    return cost, Bi_dx + lam


def minimize(fun: Callable, x_init, tol: float = 1e-8, max_iter: int = 500,
             memory: int = 10, max_backtracks: int = 50) -> OptimResult:
    """L-BFGS with Armijo backtracking plus one secant refinement of the step.

    `fun(x)` returns (cost, grad). Stops when |grad| <= tol * max(1, |grad_0|).
    A failed line search ends the run with converged=False.
    """
    x = np.array(x_init, dtype=np.float64)
    f, g = fun(x)
    g = np.asarray(g, dtype=np.float64)
    gnorm0 = float(np.linalg.norm(g))
    target = tol * max(1.0, gnorm0)
    hist = deque(maxlen=memory)
    costs = [f]
    it = 0
    while float(np.linalg.norm(g)) > target:
        if it >= max_iter:
            return OptimResult(x, f, float(np.linalg.norm(g)), it, False, costs)
        # two-loop recursion
        q = -g.copy()
        alphas = []
        for s, yv, rho in reversed(hist):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * yv
        if hist:
            s, yv, _ = hist[-1]
            q *= float(s @ yv) / float(yv @ yv)
        for (s, yv, rho), a in zip(hist, reversed(alphas)):
            b = rho * float(yv @ q)
            q += (a - b) * s
        d = q
        slope = float(g @ d)
        if slope >= 0:
            hist.clear()
            d = -g
            slope = -float(g @ g)

        step = 1.0 if hist else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        for _ in range(max_backtracks):
            xn = x + step * d
            fn, gn = fun(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return OptimResult(x, f, float(np.linalg.norm(g)), it, False, costs)

        # secant refinement along d; exact line minimizer on quadratics
        gn = np.asarray(gn, dtype=np.float64)
        slope_n = float(gn @ d)
        if abs(slope_n) > 1e-3 * abs(slope) and slope_n != slope:
            alt = step * slope / (slope - slope_n)
            if alt > 0 and np.isfinite(alt):
                xs = x + alt * d
                fs, gs = fun(xs)
                if np.isfinite(fs) and fs < fn and fs <= f + 1e-4 * alt * slope:
                    xn, fn, gn = xs, fs, np.asarray(gs, dtype=np.float64)
        s, yv = xn - x, gn - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            hist.append((s, yv, 1.0 / sy))
        x, f, g = xn, fn, gn
        costs.append(f)
        it += 1
    return OptimResult(x, f, float(np.linalg.norm(g)), it, True, costs)


def gradient_check(fun: Callable, x, directions: int = 10, eps: float = 1e-6,
                   rng: np.random.Generator | None = None) -> float:
    """Largest relative mismatch between <grad, d> and a central difference along random unit d."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    _, g = fun(x)
    worst = 0.0
    for _ in range(directions):
        d = rng.standard_normal(x.size)
        d /= np.linalg.norm(d)
        fd = (fun(x + eps * d)[0] - fun(x - eps * d)[0]) / (2 * eps)
        an = float(g @ d)
        scale = max(abs(an), abs(fd), 1e-300)
        worst = max(worst, abs(fd - an) / scale)
    return worst


def componentwise_gradient_check(fun: Callable, x, eps: float = 1e-5) -> float:
    """Max over coordinates of |fd_i - g_i| / max(|g_i|, |fd_i|) with central differences."""
    x = np.asarray(x, dtype=np.float64)
    _, g = fun(x)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        fd = (fun(x + e)[0] - fun(x - e)[0]) / (2 * eps)
        scale = max(abs(g[i]), abs(fd), 1e-300)
        worst = max(worst, abs(fd - g[i]) / scale)
    return worst


def climatological_variance(model: Model, x0, n_steps: int, spinup: int = 0, every: int = 1):
    """Per-coordinate variance of a long free run; the default diagonal B for variational runs."""
    x = model.propagate(x0, spinup)
    samples = []
    for k in range(n_steps):
        x = model.step(x)
        if k % every == 0:
            samples.append(x)
    return np.var(np.asarray(samples), axis=0, ddof=1)
