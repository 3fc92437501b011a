"""Full-size benchmark: 4 to 32 workers, 1600 evaluations, 100 trials.

Writes one trace file per (mode, workers, alpha) into ``--out-dir``; feed
them to ``sot-bench speedup``. Expect hours of CPU time at full size, so
``--trials`` and ``--jobs`` are the knobs to turn.

    python scripts/full_scale.py --out-dir runs/ --jobs 8
    python scripts/full_scale.py --dry-run
"""

import argparse
import os

from asyncsot.bench import RunConfig, emit_traces, run_experiment


def configs(args):
    for alpha in args.alphas:
        yield RunConfig(problem=args.problem, dim=args.dim, instance=1, mode="serial", workers=1, alpha=alpha,
                        max_evals=1600, t_max=50.0, trials=args.trials, seed=args.seed)
        for mode in ("sync", "async"):
            for p in (4, 8, 16, 32):
                yield RunConfig(problem=args.problem, dim=args.dim, instance=1, mode=mode, workers=p,
                                alpha=alpha, max_evals=1600, t_max=50.0, trials=args.trials, seed=args.seed)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="rastrigin")
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--alphas", type=lambda s: [float(a) for a in s.split(",")], default=[102.0, 12.0, 2.84])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out-dir", default="full_scale")
    ap.add_argument("--dry-run", action="store_true", help="list the configurations and exit")
    args = ap.parse_args()

    if not args.dry_run:
        os.makedirs(args.out_dir, exist_ok=True)
    for cfg in configs(args):
        name = f"{cfg.problem}{cfg.dim}_{cfg.mode}_p{cfg.workers}_a{cfg.alpha:g}.json"
        path = os.path.join(args.out_dir, name)
        if args.dry_run:
            print(name)
            continue
        if os.path.exists(path):
            print(f"skip {name} (exists)")
            continue
        emit_traces(run_experiment(cfg, jobs=args.jobs), path, fmt="json")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
