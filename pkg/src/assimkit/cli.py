"""Command line entry point: run, sweep, gradcheck, selftest."""

from __future__ import annotations

import argparse
import sys
import time

from .config import ConfigError, load_config, load_config_text
from .harness import SweepSpec, default_jobs, emit_results, parse_grid, run_experiment, run_sweep

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    t = time.perf_counter()
    s = run_experiment(cfg)
    emit_results([s], args.format, out, config=cfg)
    print(f"n_ens={s.n_ens} inflation={s.inflation} avg_forecast_rmse={s.avg_forecast_rmse:.6g} "
          f"avg_analysis_rmse={s.avg_analysis_rmse:.6g} free_run_rmse={s.avg_free_run_rmse:.6g} "
          f"kl_uniform={s.kl_uniform:.6g} avg_bin_dist={s.avg_bin_dist:.6g} diverged={s.diverged} "
          f"({time.perf_counter() - t:.1f}s) -> {out}")
    if s.error:
        print(s.error, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    spec = SweepSpec(cfg, parse_grid(args.inflation), [int(v) for v in parse_grid(args.nens)],
                     args.threshold)
    out = args.out or cfg.output_dir
    t = time.perf_counter()
    table = run_sweep(spec, args.jobs)
    emit_results(table.rows, args.format, out, config=spec.base, table=table,
                 extra={"sweep": {"inflation": args.inflation, "nens": args.nens,
                                  "threshold": args.threshold}})
    for n in sorted({r.n_ens for r in table.rows}):
        br, bk = table.best_rmse.get(n), table.best_kl.get(n)
        line = f"n_ens={n:3d} "
        line += f"best_rmse={br.avg_analysis_rmse:.4f}@{br.inflation:.2f} " if br else "best_rmse=diverged "
        line += f"best_kl={bk.kl_uniform:.4f}@{bk.inflation:.2f}" if bk else "best_kl=n/a"
        print(line)
    print(f"{len(table.rows)} runs in {time.perf_counter() - t:.1f}s -> {out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .selftest import fourdvar_gradient_error

    cfg = load_config(args.config)
    err = fourdvar_gradient_error(cfg, window_steps=args.steps, n_obs_times=args.obs_times)
    ok = err < args.tol
    print(f"4D-Var gradient check: max relative error {err:.3e} (tolerance {args.tol:g}) "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_SELFTEST


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(quick=not args.full)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="assimkit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one experiment and write its result files")
    r.add_argument("config", help="config file path or shipped config name")
    r.add_argument("--out", help="output directory (default: run.output_dir)")
    r.add_argument("--format", default="csv", choices=("csv", "tsv"))
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="inflation x ensemble-size sweep")
    s.add_argument("config")
    s.add_argument("--inflation", default="1.00:1.12:0.01", help="a:b:step or comma list")
    s.add_argument("--nens", default="5,10,15,20,25,30,35,40", help="comma list or a:b:step")
    s.add_argument("--threshold", type=float, default=0.65, help="divergence threshold on average RMSE")
    s.add_argument("--jobs", type=int, default=default_jobs())
    s.add_argument("--out")
    s.add_argument("--format", default="csv", choices=("csv", "tsv"))
    s.set_defaults(func=_cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of the 4D-Var adjoint gradient")
    g.add_argument("config")
    g.add_argument("--steps", type=int, default=10, help="window length in model steps")
    g.add_argument("--obs-times", type=int, default=2)
    g.add_argument("--tol", type=float, default=1e-6)
    g.set_defaults(func=_cmd_gradcheck)

    t = sub.add_parser("selftest", help="fast acceptance checks")
    t.add_argument("--full", action="store_true", help="include the full benchmark run")
    t.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
