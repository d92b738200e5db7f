"""Gaussian error models and seeded random streams."""

from __future__ import annotations

import zlib

import numpy as np

from .la_core import DenseCovariance, DiagonalCovariance, as_covariance


def _tag_code(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed(master_seed: int, *keys) -> np.random.SeedSequence:
    """Child seed sequence from a master seed and any mix of integer/string keys.

    Keys are hashed to 32-bit words, so the result does not depend on Python's
    per-process string hashing.
    """
    words = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    words.extend(_tag_code(k) for k in keys)
    return np.random.SeedSequence(words)


def make_rng(master_seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *keys)))


class GaussianErrorModel:
    """N(mean, C) on either the state or the observation space."""

    def __init__(self, covariance, mean=None, space: str = "observation"):
        self.covariance = as_covariance(covariance)
        n = self.covariance.size
        self.mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=np.float64)
        if self.mean.shape != (n,):
            raise ValueError(f"mean must have length {n}")
        if space not in ("state", "observation"):
            raise ValueError(f"unknown space tag {space!r}")
        self.space = space

    @classmethod
    def isotropic(cls, n: int, std: float, space: str = "observation") -> "GaussianErrorModel":
        return cls(DiagonalCovariance.scaled_identity(n, std**2), space=space)

    @property
    def size(self) -> int:
        return self.covariance.size

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """One draw (shape (n,)) or `size` draws (shape (size, n))."""
        shape = (self.size,) if size is None else (size, self.size)
        z = rng.standard_normal(shape)
        return self.mean + self.covariance.sqrt_apply(z)

    def log_density_quadratic(self, v) -> float:
        """½ (v - mean)^T C^{-1} (v - mean): the negative log density up to a constant."""
        d = np.asarray(v, dtype=np.float64) - self.mean
        return 0.5 * float(d @ self.covariance.inverse_apply(d))

    def scaled(self, factor: float) -> "GaussianErrorModel":
        return GaussianErrorModel(self.covariance.scaled(factor), self.mean, self.space)


def correlated_observation_model(n_obs: int, std: float, taper) -> GaussianErrorModel:
    """Observation errors with correlation matrix `taper` (e.g. a Gaspari-Cohn taper on the obs grid)."""
    rho = np.asarray(taper, dtype=np.float64)
    if rho.shape != (n_obs, n_obs):
        raise ValueError(f"correlation shape {rho.shape} does not match n_obs={n_obs}")
    return GaussianErrorModel(DenseCovariance(std**2 * rho))
