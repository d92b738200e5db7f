"""Forecast models, fixed-step RK4 integration and the discrete tangent-linear/adjoint.

All right-hand sides act on the last axis, so an ensemble array of shape
``(n_ens, n_state)`` can be propagated in one call.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_GRID_TOL = 1e-9


class TimeGridError(ValueError):
    pass


@dataclass(frozen=True)
class Lorenz96Params:
    n_state: int = 40
    forcing: float = 8.0

    def __post_init__(self):
        if self.n_state < 4:
            raise ValueError("Lorenz-96 needs n_state >= 4")


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if min(self.sigma, self.rho, self.beta) <= 0:
            raise ValueError("Lorenz-63 parameters must be positive")


def _check_len(x, n):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ValueError(f"state length mismatch: expected {n}, got {x.shape[-1]}")
    return x


@functools.lru_cache(maxsize=32)
def _ring(n: int):
    """Index arrays for the i-2, i-1 and i+1 neighbours on a ring of n cells."""
    i = np.arange(n)
    return (i - 2) % n, (i - 1) % n, (i + 1) % n


def lorenz96_rhs(p: Lorenz96Params, x):
    x = _check_len(x, p.n_state)
    m2, m1, p1 = _ring(p.n_state)
    xm1 = x[..., m1]
    return xm1 * (x[..., p1] - x[..., m2]) - x + p.forcing


def lorenz96_tlm_apply(p: Lorenz96Params, x, dx):
    """Jacobian-vector product of the Lorenz-96 vector field at `x`."""
    x = _check_len(x, p.n_state)
    dx = _check_len(dx, p.n_state)
    m2, m1, p1 = _ring(p.n_state)
    return (
        dx[..., m1] * (x[..., p1] - x[..., m2])
        + x[..., m1] * (dx[..., p1] - dx[..., m2])
        - dx
    )


def lorenz96_adjoint_apply(p: Lorenz96Params, x, w):
    """Transpose-Jacobian product; exact transpose of `lorenz96_tlm_apply`."""
    x = _check_len(x, p.n_state)
    w = _check_len(w, p.n_state)
    m2, m1, p1 = _ring(p.n_state)
    # Each TLM term reads a shifted entry of dx; the transpose writes it back
    # at the opposite shift.
    a = w * (x[..., p1] - x[..., m2])
    b = w * x[..., m1]
    return a[..., p1] + b[..., m1] - b[..., _shift(p.n_state, 2)] - w


@functools.lru_cache(maxsize=32)
def _shift(n: int, k: int):
    return (np.arange(n) + k) % n


def lorenz63_rhs(p: Lorenz63Params, x):
    x = _check_len(x, 3)
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [p.sigma * (b - a), a * (p.rho - c) - b, a * b - p.beta * c], axis=-1
    )


def lorenz63_tlm_apply(p: Lorenz63Params, x, dx):
    x = _check_len(x, 3)
    dx = _check_len(dx, 3)
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    da, db, dc = dx[..., 0], dx[..., 1], dx[..., 2]
    return np.stack(
        [
            p.sigma * (db - da),
            (p.rho - c) * da - db - a * dc,
            b * da + a * db - p.beta * dc,
        ],
        axis=-1,
    )


def lorenz63_adjoint_apply(p: Lorenz63Params, x, w):
    x = _check_len(x, 3)
    w = _check_len(w, 3)
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    w0, w1, w2 = w[..., 0], w[..., 1], w[..., 2]
    return np.stack(
        [
            -p.sigma * w0 + (p.rho - c) * w1 + b * w2,
            p.sigma * w0 - w1 + a * w2,
            -a * w1 - p.beta * w2,
        ],
        axis=-1,
    )


def rk4_step(rhs: Callable, t: float, x, h: float):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def steps_between(t0: float, t1: float, h: float) -> int:
    if t1 < t0:
        raise TimeGridError(f"time grid misalignment: t1={t1} precedes t0={t0}")
    n = (t1 - t0) / h
    k = int(round(n))
    if abs(n - k) > _GRID_TOL * max(1.0, abs(n)):
        raise TimeGridError(
            f"time grid misalignment: ({t1} - {t0}) / {h} = {n} is not an integer"
        )
    return k


@dataclass(frozen=True)
class ObservationOperator:
    """Linear selection of state entries: H x = x[indices]."""

    n_state: int
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("observation operator needs at least one index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("observed indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.n_state:
            raise ValueError(f"observed indices must lie in [0, {self.n_state})")

    @classmethod
    def every(cls, n_state: int, stride: int = 1, offset: int = 0) -> "ObservationOperator":
        return cls(n_state, tuple(range(offset, n_state, stride)))

    @property
    def n_obs(self) -> int:
        return len(self.indices)

    def apply(self, x):
        x = _check_len(x, self.n_state)
        return x[..., list(self.indices)]

    def adjoint(self, d):
        d = _check_len(d, self.n_obs)
        out = np.zeros(d.shape[:-1] + (self.n_state,))
        out[..., list(self.indices)] = d
        return out

    def matrix(self) -> np.ndarray:
        H = np.zeros((self.n_obs, self.n_state))
        H[np.arange(self.n_obs), list(self.indices)] = 1.0
        return H


@dataclass(frozen=True)
class Model:
    """A forecast model: vector field, its Jacobian actions, step size and observation operator.

    `jvp(x, dx)` and `vjp(x, w)` are optional; without them no tangent-linear or
    adjoint propagation is available.
    """

    n_state: int
    rhs_fn: Callable
    dt: float
    observation: ObservationOperator | None = None
    jvp: Callable | None = None
    vjp: Callable | None = None
    name: str = "model"
    period: int | None = field(default=None)

    def rhs(self, t, x):
        return self.rhs_fn(_check_len(x, self.n_state))

    @property
    def has_adjoint(self) -> bool:
        return self.jvp is not None and self.vjp is not None

    def with_observation(self, obs: ObservationOperator) -> "Model":
        return Model(self.n_state, self.rhs_fn, self.dt, obs, self.jvp, self.vjp, self.name, self.period)

    # ---- integration ---------------------------------------------------------
    def step(self, x, t: float = 0.0):
        return rk4_step(self.rhs, t, x, self.dt)

    def propagate(self, x, n_steps: int, t0: float = 0.0):
        """Final state only, after `n_steps` RK4 steps."""
        x = np.array(x, dtype=np.float64)
        for k in range(n_steps):
            x = self.step(x, t0 + k * self.dt)
        return x

    def tlm_step(self, x, dx):
        """Tangent-linear of one RK4 step linearised at `x`."""
        h, f, J = self.dt, self.rhs_fn, self.jvp
        k1 = f(x)
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        x3 = x + 0.5 * h * k2
        k3 = f(x3)
        x4 = x + h * k3
        d1 = J(x, dx)
        d2 = J(x2, dx + 0.5 * h * d1)
        d3 = J(x3, dx + 0.5 * h * d2)
        d4 = J(x4, dx + h * d3)
        return dx + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)

    def adjoint_step(self, x, lam):
        """Transpose of `tlm_step` at `x` applied to `lam`."""
        h, f, JT = self.dt, self.rhs_fn, self.vjp
        k1 = f(x)
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        x3 = x + 0.5 * h * k2
        k3 = f(x3)
        x4 = x + h * k3
        a1 = (h / 6.0) * lam
        a2 = (h / 3.0) * lam
        a3 = (h / 3.0) * lam
        a4 = (h / 6.0) * lam
        out = np.array(lam, dtype=np.float64)
        z4 = JT(x4, a4)
        out = out + z4
        a3 = a3 + h * z4
        z3 = JT(x3, a3)
        out = out + z3
        a2 = a2 + 0.5 * h * z3
        z2 = JT(x2, a2)
        out = out + z2
        a1 = a1 + 0.5 * h * z2
        return out + JT(x, a1)

    # ---- observation ---------------------------------------------------------
    def observe(self, x):
        if self.observation is None:
            raise ValueError("model has no observation operator")
        return self.observation.apply(x)

    def observe_adjoint(self, d):
        if self.observation is None:
            raise ValueError("model has no observation operator")
        return self.observation.adjoint(d)


def integrate(model: Model, x0, t0: float, t1: float) -> list:
    """Trajectory on the model grid from t0 to t1, both ends included."""
    n = steps_between(t0, t1, model.dt)
    x = np.array(x0, dtype=np.float64)
    traj = [x]
    for k in range(n):
        x = model.step(x, t0 + k * model.dt)
        traj.append(x)
    return traj


def lorenz96_model(params: Lorenz96Params | None = None, dt: float = 0.005,
                   observation: ObservationOperator | None = None) -> Model:
    p = params or Lorenz96Params()
    return Model(
        n_state=p.n_state,
        rhs_fn=lambda x: lorenz96_rhs(p, x),
        dt=dt,
        observation=observation,
        jvp=lambda x, dx: lorenz96_tlm_apply(p, x, dx),
        vjp=lambda x, w: lorenz96_adjoint_apply(p, x, w),
        name="lorenz96",
        period=p.n_state,
    )


def lorenz63_model(params: Lorenz63Params | None = None, dt: float = 0.01,
                   observation: ObservationOperator | None = None) -> Model:
    p = params or Lorenz63Params()
    return Model(
        n_state=3,
        rhs_fn=lambda x: lorenz63_rhs(p, x),
        dt=dt,
        observation=observation,
        jvp=lambda x, dx: lorenz63_tlm_apply(p, x, dx),
        vjp=lambda x, w: lorenz63_adjoint_apply(p, x, w),
        name="lorenz63",
    )


def linear_model(A: Sequence, dt: float = 0.01,
                 observation: ObservationOperator | None = None) -> Model:
    """dx/dt = A x. Used for linear-Gaussian checks."""
    A = np.array(A, dtype=np.float64)
    return Model(
        n_state=A.shape[0],
        rhs_fn=lambda x: x @ A.T,
        dt=dt,
        observation=observation,
        jvp=lambda x, dx: dx @ A.T,
        vjp=lambda x, w: w @ A,
        name="linear",
    )


def zero_model(n_state: int, dt: float = 0.1,
               observation: ObservationOperator | None = None) -> Model:
    return Model(
        n_state=n_state,
        rhs_fn=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        dt=dt,
        observation=observation,
        jvp=lambda x, dx: np.zeros_like(dx),
        vjp=lambda x, w: np.zeros_like(w),
        name="zero",
    )
