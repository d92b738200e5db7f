"""Covariance inflation and Gaspari-Cohn localization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .la_core import as_ensemble


@dataclass(frozen=True)
class InflationSpec:
    factor: float = 1.0

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError(f"inflation factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class LocalizationSpec:
    """Gaspari-Cohn localization with radius `radius` (support 2*radius), in grid cells.

    `period` selects the periodic 1-D grid distance; None means plain |i - j|.
    """

    radius: float
    period: int | None = None
    function: str = "gaspari-cohn"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"localization radius must be positive, got {self.radius}")
        if self.period is not None and self.period <= 0:
            raise ValueError(f"invalid period {self.period}")
        if self.function != "gaspari-cohn":
            raise ValueError(f"unsupported localization function {self.function!r}")


def inflate(ens, spec: InflationSpec | float):
    factor = spec.factor if isinstance(spec, InflationSpec) else float(spec)
    if not factor > 0:
        raise ValueError(f"inflation factor must be positive, got {factor}")
    X = as_ensemble(ens)
    if X.shape[0] < 2:
        raise ValueError("degenerate ensemble: inflation needs at least 2 members")
    mean = X.mean(axis=0)
    return mean + factor * (X - mean)


def gaspari_cohn(r, c: float):
    """Gaspari & Cohn (1999) fifth-order compactly supported correlation.

    Works elementwise on arrays; zero for r >= 2c.
    """
    if not c > 0:
        raise ValueError("gaspari_cohn needs c > 0")
    z = np.abs(np.asarray(r, dtype=np.float64)) / c
    out = np.zeros_like(z)
    inner = z <= 1.0
    outer = (z > 1.0) & (z < 2.0)
    zi = z[inner]
    out[inner] = (
        ((( -0.25 * zi + 0.5) * zi + 0.625) * zi - 5.0 / 3.0) * zi**2 + 1.0
    )
    zo = z[outer]
    out[outer] = (
        ((((zo / 12.0 - 0.5) * zo + 0.625) * zo + 5.0 / 3.0) * zo - 5.0) * zo
        + 4.0
        - 2.0 / (3.0 * zo)
    )
    if out.ndim == 0:
        return float(out)
    return out


def grid_distance(a, b, period: int | None = None):
    """|a_i - b_j| as an (len(a), len(b)) array, wrapped on a ring when `period` is set."""
    a = np.asarray(a, dtype=np.float64)[:, None]
    b = np.asarray(b, dtype=np.float64)[None, :]
    d = np.abs(a - b)
    if period is not None:
        if period <= 0:
            raise ValueError(f"invalid period {period}")
        d = np.mod(d, period)
        d = np.minimum(d, period - d)
    return d


def localization_taper(spec: LocalizationSpec, grid_a, grid_b, period: int | None = None):
    per = spec.period if period is None else period
    return gaspari_cohn(grid_distance(grid_a, grid_b, per), spec.radius)


def localize_obs_space(HB, HBHt, spec: LocalizationSpec, obs_locations, n_state: int):
    """Schur products of HB (n_obs, n_state) and HBH^T (n_obs, n_obs) with GC tapers."""
    HB = np.asarray(HB, dtype=np.float64)
    HBHt = np.asarray(HBHt, dtype=np.float64)
    n_obs = len(obs_locations)
    if HB.shape != (n_obs, n_state) or HBHt.shape != (n_obs, n_obs):
        raise ValueError(
            f"dimension mismatch: HB {HB.shape}, HBH^T {HBHt.shape} for n_obs={n_obs}, n_state={n_state}"
        )
    rho_xy = localization_taper(spec, obs_locations, np.arange(n_state))
    rho_yy = localization_taper(spec, obs_locations, obs_locations)
    return HB * rho_xy, HBHt * rho_yy


def localize_state_space(B, spec: LocalizationSpec):
    """Schur product of an explicit (n_state, n_state) covariance with the GC taper."""
    B = np.asarray(B, dtype=np.float64)
    n = B.shape[0]
    idx = np.arange(n)
    return B * localization_taper(spec, idx, idx)
