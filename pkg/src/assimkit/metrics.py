"""Verification scores: RMSE, rank histograms and their uniformity measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma


def rmse(estimate, truth) -> float:
    e = np.asarray(estimate, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((e - t) ** 2)))


def rank_of_truth(truth_value: float, member_values, rng: np.random.Generator) -> int:
    """Number of members below the truth; ties are split uniformly at random."""
    m = np.asarray(member_values, dtype=np.float64)
    below = int(np.sum(m < truth_value))
    ties = int(np.sum(m == truth_value))
    if ties:
        return below + int(rng.integers(0, ties + 1))
    return below


def ranks_of_truth(truth, ensemble, rng: np.random.Generator):
    """Vectorized `rank_of_truth` over columns: truth (n,), ensemble (n_ens, n)."""
    X = np.asarray(ensemble, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    below = np.sum(X < t, axis=0)
    ties = np.sum(X == t, axis=0)
    if np.any(ties):
        below = below + np.floor(rng.random(t.shape) * (ties + 1)).astype(int)
    return below.astype(int)


@dataclass
class RankHistogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @classmethod
    def from_ranks(cls, ranks, n_ens: int) -> "RankHistogram":
        r = np.asarray(ranks, dtype=np.int64).ravel()
        if r.size and (r.min() < 0 or r.max() > n_ens):
            raise ValueError(f"ranks must lie in [0, {n_ens}]")
        return cls(np.bincount(r, minlength=n_ens + 1))

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "RankHistogram") -> "RankHistogram":
        if other.n_bins != self.n_bins:
            raise ValueError("cannot merge histograms with different bin counts")
        return RankHistogram(self.counts + other.counts)


@dataclass(frozen=True)
class BetaFit:
    alpha: float
    beta: float

    @property
    def shape(self) -> str:
        if self.alpha > 1 and self.beta > 1:
            return "mound"
        if self.alpha < 1 and self.beta < 1:
            return "u-shaped"
        return "other"


class DegenerateHistogramError(ValueError):
    pass


def fit_beta(hist: RankHistogram) -> BetaFit:
    """Method-of-moments Beta fit to ranks placed at bin midpoints (r + 0.5) / n_bins."""
    if hist.total < 2:
        raise DegenerateHistogramError("degenerate histogram: need at least 2 samples")
    x = (np.arange(hist.n_bins) + 0.5) / hist.n_bins
    w = hist.counts / hist.total
    m = float(w @ x)
    v = float(w @ (x - m) ** 2)
    if v <= 0:
        raise DegenerateHistogramError("degenerate histogram: scaled ranks have zero variance")
    common = m * (1 - m) / v - 1
    if common <= 0:
        raise DegenerateHistogramError("degenerate histogram: variance too large for a Beta fit")
    return BetaFit(m * common, (1 - m) * common)


def kl_beta(alpha, beta, alpha2=1.0, beta2=1.0) -> float:
    """KL(Beta(alpha, beta) || Beta(alpha2, beta2)), standard closed form."""
    if min(alpha, beta, alpha2, beta2) <= 0:
        raise ValueError("Beta parameters must be positive")
    return float(
        betaln(alpha2, beta2)
        - betaln(alpha, beta)
        + (alpha - alpha2) * digamma(alpha)
        + (beta - beta2) * digamma(beta)
        + (alpha2 - alpha + beta2 - beta) * digamma(alpha + beta)
    )


def kl_beta_to_uniform(fit: BetaFit) -> float:
    return kl_beta(fit.alpha, fit.beta)


def avg_bin_distance(hist: RankHistogram) -> float:
    if hist.total < 1:
        raise ValueError("empty histogram")
    n = hist.n_bins
    return float(np.mean(np.abs(hist.counts / hist.total - 1.0 / n)))


def histogram_kl(hist: RankHistogram) -> float:
    """KL-to-uniform of the fitted Beta, or +inf when no fit exists."""
    try:
        return kl_beta_to_uniform(fit_beta(hist))
    except DegenerateHistogramError:
        return float("inf")
