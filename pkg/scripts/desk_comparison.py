"""Serial vs synchronous vs asynchronous progress in simulated time.

Runs the desk-scale setup (10-d shifted Rastrigin, budget 400, t_max 50)
and prints the mean best value on a time grid for each mode.

    python scripts/desk_comparison.py --trials 30 --alpha 2.84 --out desk.csv
"""

import argparse
import csv
import math

import numpy as np

from asyncsot.bench import RunConfig, run_experiment


def progress_table(traces, grid):
    best = np.array([[t.best_at(g) for g in grid] for t in traces])
    mean = best.mean(axis=0)
    se = best.std(axis=0, ddof=1) / math.sqrt(len(traces)) if len(traces) > 1 else np.full(len(grid), np.nan)
    return mean, se


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=16)
    ap.add_argument("--alpha", type=float, default=2.84)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--max-evals", type=int, default=400)
    ap.add_argument("--t-max", type=float, default=50.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="CSV with mean best value per mode and time")
    args = ap.parse_args()

    grid = np.linspace(args.t_max / 10, args.t_max, 10)
    rows = []
    for mode, p in (("serial", 1), ("sync", args.workers), ("async", args.workers)):
        cfg = RunConfig(problem="rastrigin", dim=args.dim, instance=1, mode=mode, workers=p,
                        alpha=args.alpha, max_evals=args.max_evals, t_max=args.t_max,
                        trials=args.trials, seed=args.seed)
        traces = run_experiment(cfg, jobs=args.jobs)
        mean, se = progress_table(traces, grid)
        evals = np.mean([len(t) for t in traces])
        print(f"{mode:>6} p={p:<3d} evals {evals:6.1f}  best@t_max {mean[-1]:8.3f} (se {se[-1]:.3f})")
        rows += [(mode, p, g, m, s) for g, m, s in zip(grid, mean, se)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "workers", "t", "mean_best", "stderr"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
