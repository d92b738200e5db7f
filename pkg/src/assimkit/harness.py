"""Single runs, inflation x ensemble-size sweeps, and CSV/JSON result files."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, serialize_config
from .ensemble_ops import InflationSpec, LocalizationSpec
from .error_models import GaussianErrorModel, make_rng
from .filters import FilterConfig, HMCParams
from .metrics import RankHistogram, avg_bin_distance, histogram_kl
from .models import Lorenz63Params, Lorenz96Params, ObservationOperator, lorenz63_model, lorenz96_model
from .process import CycleError, ProcessSpec, run_cycles


@dataclass
class ExperimentSummary:
    n_ens: int
    inflation: float
    avg_forecast_rmse: float
    avg_analysis_rmse: float
    avg_free_run_rmse: float
    kl_uniform: float
    avg_bin_dist: float
    diverged: bool
    records: list = field(default_factory=list)
    histogram: RankHistogram | None = None
    error: str = ""
    config: ExperimentConfig | None = None


def inflation_key(inflation: float) -> int:
    return int(round(inflation * 1e4))


def build_model(cfg: ExperimentConfig):
    if cfg.model == "lorenz96":
        model = lorenz96_model(Lorenz96Params(cfg.n_state, cfg.forcing), cfg.dt)
    else:
        model = lorenz63_model(Lorenz63Params(), cfg.dt)
    H = ObservationOperator.every(model.n_state, cfg.obs_stride)
    return model.with_observation(H)


def build_filter_config(cfg: ExperimentConfig, period: int | None) -> FilterConfig:
    loc = None
    if cfg.localization_radius is not None:
        loc = LocalizationSpec(cfg.localization_radius, period=period)
    return FilterConfig(
        algorithm=cfg.algorithm,
        inflation=InflationSpec(cfg.inflation),
        localization=loc,
        hmc=HMCParams(cfg.hmc_step_size, cfg.hmc_steps, cfg.hmc_burn_in),
    )


def spun_up_truth(cfg: ExperimentConfig, model):
    rng = make_rng(cfg.seed, "truth")
    if cfg.model == "lorenz96":
        x = cfg.forcing + 0.01 * rng.standard_normal(model.n_state)
    else:
        x = np.ones(3) + 0.01 * rng.standard_normal(3)
    return model.propagate(x, cfg.spinup_steps)


def build_process(cfg: ExperimentConfig) -> ProcessSpec:
    """Assemble the twin experiment described by `cfg`.

    Truth and observation noise streams depend only on the master seed, so every
    point of a sweep sees the same observations; ensemble initialisation, filter
    noise and rank tie-breaking are keyed on (seed, n_ens, inflation).
    """
    model = build_model(cfg)
    H = model.observation
    grid = (cfg.n_ens, inflation_key(cfg.inflation))
    x0 = spun_up_truth(cfg, model)
    init_rng = make_rng(cfg.seed, *grid, "init")
    ens0 = x0 + cfg.init_spread * init_rng.standard_normal((cfg.n_ens, model.n_state))
    interval = cfg.obs_interval * cfg.dt
    times = [k * interval for k in range(1, cfg.cycles + 1)]
    return ProcessSpec(
        model=model,
        filter=build_filter_config(cfg, model.period),
        obs_error=GaussianErrorModel.isotropic(H.n_obs, cfg.obs_error_std),
        H=H,
        t0=0.0,
        obs_checkpoints=times,
        da_checkpoints=times,
        x_true0=x0,
        ensemble0=ens0,
        obs_rng=make_rng(cfg.seed, "obs"),
        filter_rng=make_rng(cfg.seed, *grid, "filter"),
        rank_rng=make_rng(cfg.seed, *grid, "rank"),
        rank_stride=cfg.rank_stride,
        rank_start_cycle=cfg.window_start,
    )


def summarize(cfg: ExperimentConfig, records: list, error: str = "") -> ExperimentSummary:
    window = records[cfg.window_start:]
    nan = float("nan")
    if error or not window:
        return ExperimentSummary(
            cfg.n_ens, cfg.inflation, nan, nan, nan, nan, nan,
            diverged=bool(error), records=records, error=error, config=cfg,
        )
    mean = lambda key: float(np.mean([getattr(r, key) for r in window]))  # noqa: E731
    fc, an, fr = mean("forecast_rmse"), mean("analysis_rmse"), mean("free_run_rmse")
    ranks = [r for rec in window for r in rec.ranks]
    hist = RankHistogram.from_ranks(ranks, cfg.n_ens)
    kl = histogram_kl(hist) if hist.total else nan
    abd = avg_bin_distance(hist) if hist.total else nan
    diverged = not math.isfinite(an) or an > cfg.divergence_threshold
    return ExperimentSummary(cfg.n_ens, cfg.inflation, fc, an, fr, kl, abd, diverged,
                             records=records, histogram=hist, config=cfg)


def run_experiment(cfg: ExperimentConfig) -> ExperimentSummary:
    if cfg.cycles == 0:
        return summarize(cfg, [])
    spec = build_process(cfg)
    try:
        records = run_cycles(spec)
    except CycleError as exc:
        return summarize(cfg, [], error=f"{cfg.algorithm} (n_ens={cfg.n_ens}, "
                                         f"inflation={cfg.inflation}): {exc}")
    return summarize(cfg, records)


# ---- sweeps -----------------------------------------------------------------

@dataclass
class SweepSpec:
    base: ExperimentConfig
    inflations: list
    ensemble_sizes: list
    threshold: float = 0.65

    def __post_init__(self):
        if not self.inflations or not self.ensemble_sizes:
            raise ValueError("sweep grids must be nonempty")
        if not self.threshold > 0:
            raise ValueError("divergence threshold must be positive")

    def configs(self) -> list:
        return [
            self.base.replace(n_ens=int(n), inflation=float(f), divergence_threshold=self.threshold)
            for n in sorted(set(self.ensemble_sizes))
            for f in sorted(set(self.inflations))
        ]


@dataclass
class SweepTable:
    rows: list
    best_rmse: dict
    best_kl: dict


def run_sweep(spec: SweepSpec, parallelism: int = 1, keep_records: bool = True) -> SweepTable:
    cfgs = spec.configs()
    if parallelism > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(run_experiment, cfgs))
    else:
        rows = [run_experiment(c) for c in cfgs]
    if not keep_records:
        for r in rows:
            r.records = []
    best_rmse, best_kl = {}, {}
    for r in rows:
        if r.diverged or not math.isfinite(r.avg_analysis_rmse):
            continue
        if r.n_ens not in best_rmse or r.avg_analysis_rmse < best_rmse[r.n_ens].avg_analysis_rmse:
            best_rmse[r.n_ens] = r
        if math.isfinite(r.kl_uniform) and (r.n_ens not in best_kl or r.kl_uniform < best_kl[r.n_ens].kl_uniform):
            best_kl[r.n_ens] = r
    return SweepTable(rows, best_rmse, best_kl)


def parse_grid(text: str) -> list:
    """'a:b:step' -> inclusive arithmetic grid; 'v1,v2,...' -> explicit list."""
    if ":" in text:
        a, b, step = (float(s) for s in text.split(":"))
        if not step > 0 or b < a:
            raise ValueError(f"bad grid {text!r}")
        n = int(round((b - a) / step))
        return [round(a + k * step, 10) for k in range(n + 1)]
    return [float(s) for s in text.split(",") if s.strip()]


# ---- output -----------------------------------------------------------------

RMSE_HEADER = ("cycle", "time", "forecast_rmse", "analysis_rmse", "free_run_rmse")
RANKS_HEADER = ("cycle", "var_index", "rank")
SWEEP_HEADER = ("n_ens", "inflation", "avg_rmse", "kl_uniform", "avg_bin_dist", "diverged")
BEST_HEADER = ("n_ens", "criterion", "inflation", "avg_rmse", "kl_uniform")


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _writer(fh, fmt: str):
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"unknown format {fmt!r}")
    return csv.writer(fh, delimiter="," if fmt == "csv" else "\t", lineterminator="\n")


def _write_rows(path: Path, header, rows, fmt):
    try:
        with open(path, "w", newline="") as fh:
            w = _writer(fh, fmt)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _record_rows(s: ExperimentSummary, every: int = 1):
    return [
        (r.cycle, fmt_float(r.time), fmt_float(r.forecast_rmse),
         fmt_float(r.analysis_rmse), fmt_float(r.free_run_rmse))
        for r in s.records if (r.cycle - 1) % every == 0
    ]


def _rank_rows(s: ExperimentSummary):
    return [(r.cycle, i, k) for r in s.records for i, k in zip(r.rank_indices, r.ranks)]


def _sweep_row(s: ExperimentSummary):
    return (s.n_ens, fmt_float(s.inflation), fmt_float(s.avg_analysis_rmse),
            fmt_float(s.kl_uniform), fmt_float(s.avg_bin_dist), "true" if s.diverged else "false")


def run_dir_name(s: ExperimentSummary) -> str:
    return f"nens{s.n_ens:03d}_infl{fmt_float(s.inflation)}"


def emit_results(summaries, fmt: str, path, config: ExperimentConfig | None = None,
                 table: SweepTable | None = None, extra: dict | None = None) -> list:
    """Write result files under `path` and return the list of files written.

    One summary: rmse_per_cycle and ranks go straight into `path`. Several
    summaries: each run gets its own subdirectory under `runs/`, and the
    top-level per-cycle files carry only headers.
    """
    ext = "csv" if fmt == "csv" else "tsv"
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    summaries = list(summaries)
    every = config.record_every if config is not None else 1
    written = []

    def emit(p, header, rows):
        _write_rows(p, header, rows, fmt)
        written.append(p)

    single = summaries[0] if len(summaries) == 1 else None
    emit(out / f"rmse_per_cycle.{ext}", RMSE_HEADER, _record_rows(single, every) if single else [])
    emit(out / f"ranks.{ext}", RANKS_HEADER, _rank_rows(single) if single else [])
    emit(out / f"sweep.{ext}", SWEEP_HEADER, [_sweep_row(s) for s in summaries])
    if len(summaries) > 1:
        for s in summaries:
            if not s.records:
                continue
            d = out / "runs" / run_dir_name(s)
            d.mkdir(parents=True, exist_ok=True)
            emit(d / f"rmse_per_cycle.{ext}", RMSE_HEADER, _record_rows(s, every))
            emit(d / f"ranks.{ext}", RANKS_HEADER, _rank_rows(s))
    if table is not None:
        best = []
        for n in sorted(set(table.best_rmse) | set(table.best_kl)):
            for crit, d in (("rmse", table.best_rmse), ("kl", table.best_kl)):
                if n in d:
                    s = d[n]
                    best.append((n, crit, fmt_float(s.inflation), fmt_float(s.avg_analysis_rmse),
                                 fmt_float(s.kl_uniform)))
        emit(out / f"sweep_best.{ext}", BEST_HEADER, best)

    manifest = {
        "artifact": "assimkit",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "master_seed": config.seed if config is not None else None,
        "config": serialize_config(config) if config is not None else None,
        "runs": [
            {"n_ens": s.n_ens, "inflation": s.inflation, "diverged": s.diverged, "error": s.error}
            for s in summaries
        ],
    }
    if extra:
        manifest.update(extra)
    mpath = out / "manifest.json"
    try:
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {mpath}: {exc}") from exc
    written.append(mpath)
    return written


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
