"""``sot-bench``: run simulated benchmarks, compute speedups, serve as a TCP worker."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import (
    RunConfig,
    compute_speedup,
    emit_report,
    emit_traces,
    load_traces,
    run_experiment,
)
from .errors import ConfigError
from .problems import get_problem
from .rbf import KERNELS
from .strategy import MODES, SEARCHES

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _alpha(text):
    if text.lower() in ("none", "const", "constant"):
        return None
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sot-bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded simulated-time trials")
    run.add_argument("--problem", default="rastrigin")
    run.add_argument("--dim", type=int, default=10)
    run.add_argument("--instance", type=int, default=None,
                     help="shift the optimum with this instance seed")
    run.add_argument("--mode", choices=MODES, default="async")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--alpha", type=_alpha, default=2.84,
                     help="Pareto shape of the evaluation times, or 'none' for unit times")
    run.add_argument("--max-evals", type=int, default=400)
    run.add_argument("--time-budget", type=float, default=50.0)
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--design", choices=("slhd", "lhd", "factorial2"), default="slhd")
    run.add_argument("--design-size", type=int, default=None)
    run.add_argument("--surrogate", choices=("rbf", "gp"), default="rbf")
    run.add_argument("--strategy", choices=SEARCHES, default="dycors")
    run.add_argument("--kernel", choices=sorted(KERNELS), default="cubic")
    run.add_argument("--eta", type=float, default=1e-8)
    run.add_argument("--num-cand", type=int, default=None, help="candidates per proposal (default 100*dim)")
    run.add_argument("--jobs", type=int, default=1, help="trials run in parallel processes")
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--dump-points", action="store_true")

    sp = sub.add_parser("speedup", help="relative speedup from saved traces")
    sp.add_argument("--in", dest="inputs", required=True,
                    help="comma-separated trace files, one per worker count")
    sp.add_argument("--targets", type=int, default=10)
    sp.add_argument("--f-opt", type=float, default=None,
                    help="true optimum (default: taken from the run config, else 0)")
    sp.add_argument("--out", required=True)

    wk = sub.add_parser("worker", help="serve evaluations to a controller over TCP")
    wk.add_argument("--host", default="127.0.0.1")
    wk.add_argument("--port", type=int, required=True)
    wk.add_argument("--problem", default="sphere")
    wk.add_argument("--dim", type=int, default=2)
    wk.add_argument("--instance", type=int, default=None)
    wk.add_argument("--name", default="worker")
    wk.add_argument("--delay", type=float, default=0.0, help="seconds to sleep per evaluation")
    wk.add_argument("--die-after", type=int, default=None, help=argparse.SUPPRESS)
    return parser


def _cmd_run(args):
    cfg = RunConfig(problem=args.problem, dim=args.dim, mode=args.mode, workers=args.workers,
                    alpha=args.alpha, max_evals=args.max_evals, t_max=args.time_budget,
                    trials=args.trials, seed=args.seed, design=args.design,
                    design_size=args.design_size, surrogate=args.surrogate,
                    strategy=args.strategy, kernel=args.kernel, eta=args.eta,
                    num_cand=args.num_cand, instance=args.instance)
    if cfg.trials < 1:
        raise ConfigError("need at least one trial")
    if cfg.dim < 1:
        raise ConfigError("dimension must be positive")
    if cfg.alpha is not None:
        cfg.time_model()
    # builds the strategy once so bad combinations fail before any trial runs
    from .bench import build_trial
    build_trial(cfg, 0)
    traces = run_experiment(cfg, jobs=args.jobs)
    emit_traces(traces, args.out, args.format, args.dump_points)
    best = min(t.rows[-1].best for t in traces if len(t))
    print(f"{len(traces)} trial(s), best value {best:.6g} -> {args.out}")


def _workers_of(traces):
    cfg = traces[0].config
    if cfg and "workers" in cfg:
        return 1 if cfg.get("mode") == "serial" else int(cfg["workers"])
    return len({r.worker for t in traces for r in t.rows})


def _cmd_speedup(args):
    groups, f_opt = {}, args.f_opt
    for path in args.inputs.split(","):
        traces = load_traces(path)
        if not traces:
            raise ConfigError(f"{path} holds no traces")
        p = _workers_of(traces)
        if p in groups:
            raise ConfigError(f"two inputs with {p} workers")
        groups[p] = traces
        cfg = traces[0].config
        if f_opt is None and cfg:
            f_opt = get_problem(cfg["problem"], cfg["dim"], instance=cfg.get("instance")).min_value
    report = compute_speedup(groups, args.targets, f_opt=f_opt or 0.0)
    emit_report(report, args.out)
    if report.empty:
        print(f"no speedup: {report.note}")
        return
    for p in sorted(report.speedup):
        s = report.speedup[p]
        print(f"p={p}: S at easiest target {s[0]:.3g}, hardest {s[-1]:.3g}")


def _cmd_worker(args):
    import os
    import time

    from .tcp import WorkerClient

    prob = get_problem(args.problem, args.dim, instance=args.instance)

    def objective(x):
        if args.delay:
            time.sleep(args.delay)
        return prob.eval(x)

    client = WorkerClient(args.host, args.port, objective, args.name,
                          die_after=args.die_after, exit_fn=lambda: os._exit(1))
    client.run()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"run": _cmd_run, "speedup": _cmd_speedup, "worker": _cmd_worker}[args.command]
    try:
        handler(args)
    except (ConfigError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # surfaced as a runtime failure exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
