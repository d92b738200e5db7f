"""
Numeric containers shared by the rest of the package.

Ensembles are stored as 2-D float arrays of shape ``(n_ens, n_state)``: row ``i``
is member ``i``. Lists of 1-D states are accepted anywhere an ensemble is
expected and are stacked on entry.

Covariance operators expose a small matrix-free protocol:

    apply(v)          C v
    inverse_apply(v)  C^{-1} v
    sqrt_apply(z)     C^{1/2} z   (any square root L with L L^T = C)
    diagonal()        diag(C)
    dense()           full matrix, for small problems and tests
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class CovarianceError(ValueError):
    """Raised for singular, indefinite or mis-shaped covariance operations."""


def as_ensemble(ens) -> np.ndarray:
    arr = np.asarray(ens, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"ensemble must be 2-D (n_ens, n_state), got shape {arr.shape}")
    return arr


def ensemble_mean(ens) -> np.ndarray:
    arr = np.asarray(ens, dtype=np.float64)
    if arr.size == 0 or (arr.ndim == 2 and arr.shape[0] == 0):
        raise ValueError("empty ensemble")
    return as_ensemble(arr).mean(axis=0)


def ensemble_anomalies(ens) -> np.ndarray:
    """Deviations of every member from the ensemble mean, same shape as `ens`."""
    arr = as_ensemble(ens)
    if arr.shape[0] < 2:
        raise ValueError("degenerate ensemble: need at least 2 members for anomalies")
    return arr - arr.mean(axis=0)


def ensemble_variance(ens) -> np.ndarray:
    arr = as_ensemble(ens)
    if arr.shape[0] < 2:
        raise ValueError("degenerate ensemble: need at least 2 members for a variance")
    return arr.var(axis=0, ddof=1)


def ensemble_covariance_matrix(ens) -> np.ndarray:
    """Dense unbiased sample covariance, (n_state, n_state). Small problems only."""
    a = ensemble_anomalies(ens)
    return a.T @ a / (a.shape[0] - 1)


def _check_dim(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != n:
        raise CovarianceError(f"dimension mismatch: operator acts on {n}, vector has {v.shape[-1]}")
    return v


class DiagonalCovariance:
    kind = "diagonal"

    def __init__(self, variances):
        d = np.array(variances, dtype=np.float64, ndmin=1)
        if d.ndim != 1:
            raise CovarianceError("diagonal covariance needs a 1-D array of variances")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise CovarianceError("diagonal covariance requires strictly positive finite entries")
        d.setflags(write=False)
        self._d = d

    @classmethod
    def scaled_identity(cls, n: int, variance: float = 1.0) -> "DiagonalCovariance":
        return cls(np.full(n, float(variance)))

    @property
    def size(self) -> int:
        return self._d.size

    def apply(self, v):
        return self._d * _check_dim(v, self.size)

    def inverse_apply(self, v):
        return _check_dim(v, self.size) / self._d

    def sqrt_apply(self, z):
        return np.sqrt(self._d) * _check_dim(z, self.size)

    def diagonal(self):
        return self._d.copy()

    def dense(self):
        return np.diag(self._d)

    def scaled(self, factor: float) -> "DiagonalCovariance":
        return DiagonalCovariance(self._d * factor)


class DenseCovariance:
    """Full SPD matrix with a cached Cholesky factor.

    Non-SPD input fails at construction; no jitter is ever added.
    """

    kind = "dense"

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64, ndmin=2)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise CovarianceError(f"dense covariance must be square, got {m.shape}")
        if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(m).max())):
            raise CovarianceError("dense covariance must be symmetric")
        m = 0.5 * (m + m.T)
        try:
            self._chol = scipy.linalg.cho_factor(m, lower=True)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError("covariance is not symmetric positive definite") from exc
        m.setflags(write=False)
        self._m = m

    @property
    def size(self) -> int:
        return self._m.shape[0]

    def apply(self, v):
        return _check_dim(v, self.size) @ self._m

    def inverse_apply(self, v):
        v = _check_dim(v, self.size)
        return scipy.linalg.cho_solve(self._chol, v.T).T

    def sqrt_apply(self, z):
        L = np.tril(self._chol[0])
        return _check_dim(z, self.size) @ L.T

    def diagonal(self):
        return np.diag(self._m).copy()

    def dense(self):
        return self._m.copy()

    def scaled(self, factor: float) -> "DenseCovariance":
        return DenseCovariance(self._m * factor)


class EnsembleCovariance:
    """Sample covariance of an ensemble, applied without forming the matrix.

    C v = (1/(N-1)) sum_i a_i (a_i . v), with a_i the anomalies. Rank-deficient
    by construction, so `inverse_apply` is refused.
    """

    kind = "ensemble"

    def __init__(self, ens, scaling: float = 1.0):
        a = ensemble_anomalies(ens)
        self._a = a * np.sqrt(scaling / (a.shape[0] - 1))
        self._a.setflags(write=False)

    @property
    def size(self) -> int:
        return self._a.shape[1]

    @property
    def n_ens(self) -> int:
        return self._a.shape[0]

    def apply(self, v):
        v = _check_dim(v, self.size)
        return (v @ self._a.T) @ self._a

    def inverse_apply(self, v):
        raise CovarianceError("singular covariance: ensemble covariance has no inverse")

    def sqrt_apply(self, z):
        # z lives in ensemble space (length n_ens)
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.n_ens:
            raise CovarianceError(f"ensemble square root expects {self.n_ens} weights")
        return z @ self._a

    def diagonal(self):
        return np.einsum("ij,ij->j", self._a, self._a)

    def dense(self):
        return self._a.T @ self._a


class TaperedEnsembleCovariance:
    """Schur product of an ensemble covariance with a taper matrix.

    The taper is dense (n_state, n_state); the product is applied as
    sum_i a_i * (rho @ (a_i * v)) so the covariance itself is never stored.
    """

    kind = "tapered-ensemble"

    def __init__(self, ens, taper, scaling: float = 1.0):
        self._base = EnsembleCovariance(ens, scaling)
        taper = np.asarray(taper, dtype=np.float64)
        n = self._base.size
        if taper.shape != (n, n):
            raise CovarianceError(f"taper shape {taper.shape} does not match state size {n}")
        self._rho = taper

    @property
    def size(self) -> int:
        return self._base.size

    def apply(self, v):
        v = _check_dim(v, self.size)
        a = self._base._a
        if v.ndim == 1:
            return np.einsum("ij,ij->j", a, (a * v) @ self._rho.T)
        return np.stack([self.apply(row) for row in v])

    def inverse_apply(self, v):
        # A tapered covariance can be full rank, but only a dense solve would tell.
        return DenseCovariance(self.dense()).inverse_apply(v)

    def sqrt_apply(self, z):
        return DenseCovariance(self.dense()).sqrt_apply(z)

    def diagonal(self):
        return self._base.diagonal() * np.diag(self._rho)

    def dense(self):
        return self._base.dense() * self._rho


def covariance_apply(cov, v):
    return cov.apply(v)


def covariance_inverse_apply(cov, v):
    return cov.inverse_apply(v)


def as_covariance(cov):
    """Wrap scalars, 1-D variance arrays and 2-D matrices into operators."""
    if hasattr(cov, "apply") and hasattr(cov, "inverse_apply"):
        return cov
    arr = np.asarray(cov, dtype=np.float64)
    if arr.ndim <= 1:
        return DiagonalCovariance(np.atleast_1d(arr))
    return DenseCovariance(arr)
