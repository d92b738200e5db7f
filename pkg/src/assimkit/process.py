"""Twin-experiment driver: truth run, synthetic observations, forecast/analysis cycling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .error_models import GaussianErrorModel
from .filters import FilterConfig, analyze, forecast_ensemble
from .la_core import as_ensemble
from .metrics import ranks_of_truth, rmse
from .models import Model, ObservationOperator, steps_between


class CycleError(RuntimeError):
    def __init__(self, cycle: int, cause: Exception):
        super().__init__(f"assimilation cycle {cycle} failed: {cause}")
        self.cycle = cycle
        self.cause = cause


def generate_truth(model: Model, x_true0, checkpoints: Sequence[float]) -> list:
    """Truth state at every checkpoint; checkpoints[0] is the time of `x_true0`."""
    if not len(checkpoints):
        return []
    x = np.asarray(x_true0, dtype=np.float64)
    out = [x]
    for t0, t1 in zip(checkpoints[:-1], checkpoints[1:]):
        x = model.propagate(x, steps_between(t0, t1, model.dt), t0)
        out.append(x)
    return out


def synthesize_observations(truth_states, obs_error: GaussianErrorModel,
                            H: ObservationOperator, rng: np.random.Generator) -> list:
    return [H.apply(x) + obs_error.sample(rng) for x in truth_states]


@dataclass
class CycleRecord:
    cycle: int
    time: float
    forecast_rmse: float
    analysis_rmse: float
    free_run_rmse: float
    ranks: tuple = ()
    rank_indices: tuple = ()
    forecast_ensemble: np.ndarray | None = None
    analysis_ensemble: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ProcessSpec:
    """Everything one twin run needs.

    `obs_checkpoints` and `da_checkpoints` exclude the initial time `t0`. With
    asynchronous settings each DA time uses the latest observation at or before it.
    """

    model: Model
    filter: FilterConfig
    obs_error: GaussianErrorModel
    H: ObservationOperator
    t0: float
    obs_checkpoints: Sequence[float]
    da_checkpoints: Sequence[float]
    x_true0: np.ndarray
    ensemble0: np.ndarray
    obs_rng: np.random.Generator
    filter_rng: np.random.Generator
    rank_rng: np.random.Generator
    rank_stride: int = 13
    rank_start_cycle: int = 0
    keep_ensembles_every: int = 0

    def __post_init__(self):
        for name in ("obs_checkpoints", "da_checkpoints"):
            ts = [self.t0] + list(getattr(self, name))
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"{name} must be strictly increasing and after t0")
            for t in ts[1:]:
                steps_between(self.t0, t, self.model.dt)
        if self.rank_stride < 1:
            raise ValueError("rank stride must be >= 1")


def run_cycles(spec: ProcessSpec) -> list:
    model = spec.model
    obs_times = list(spec.obs_checkpoints)
    da_times = list(spec.da_checkpoints)
    if not da_times:
        return []

    all_times = sorted(set([spec.t0] + obs_times + da_times))
    truth_list = generate_truth(model, spec.x_true0, all_times)
    truth = dict(zip(all_times, truth_list))
    observations = dict(zip(obs_times, synthesize_observations(
        [truth[t] for t in obs_times], spec.obs_error, spec.H, spec.obs_rng)))

    X = as_ensemble(spec.ensemble0).copy()
    free = X.mean(axis=0)
    rank_idx = np.arange(0, model.n_state, spec.rank_stride)
    records = []
    t_prev = spec.t0
    for c, t in enumerate(da_times):
        try:
            Xf = forecast_ensemble(model, X, t_prev, t)
            free = model.propagate(free, steps_between(t_prev, t, model.dt), t_prev)
            avail = [s for s in obs_times if s <= t + 1e-12]
            if not avail:
                raise ValueError(f"no observation available at or before t={t}")
            y = observations[avail[-1]]
            res = analyze(Xf, y, spec.obs_error, spec.H, spec.filter, spec.filter_rng)
        except Exception as exc:  # noqa: BLE001 - re-raised with the cycle index
            raise CycleError(c, exc) from exc
        X = res.analysis
        xt = truth[t]
        ranks = ()
        if c >= spec.rank_start_cycle:
            ranks = tuple(int(r) for r in ranks_of_truth(xt[rank_idx], X[:, rank_idx], spec.rank_rng))
        keep = spec.keep_ensembles_every and c % spec.keep_ensembles_every == 0
        records.append(CycleRecord(
            cycle=c + 1,
            time=t,
            forecast_rmse=rmse(Xf.mean(axis=0), xt),
            analysis_rmse=rmse(X.mean(axis=0), xt),
            free_run_rmse=rmse(free, xt),
            ranks=ranks,
            rank_indices=tuple(int(i) for i in rank_idx) if ranks else (),
            forecast_ensemble=Xf if keep else None,
            analysis_ensemble=X if keep else None,
            diagnostics={k: v for k, v in res.diagnostics.items() if np.isscalar(v)},
        ))
        t_prev = t
    return records
