"""Relative speedup of asynchronous runs for several duration variances.

For each Pareto shape alpha, runs serial and asynchronous configurations
and reports S(p) at log-spaced targets inside the common achieved range.

    python scripts/speedup_study.py --alphas 102,12,2.84 --workers 4,16 --trials 30
"""

import argparse
import json

from asyncsot.bench import RunConfig, compute_speedup, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", default="102,12,2.84")
    ap.add_argument("--workers", default="4,16")
    ap.add_argument("--mode", choices=("sync", "async"), default="async")
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--max-evals", type=int, default=400)
    ap.add_argument("--t-max", type=float, default=50.0)
    ap.add_argument("--targets", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="JSON with one report per alpha")
    args = ap.parse_args()

    workers = [int(p) for p in args.workers.split(",")]
    reports = {}
    for alpha in (float(a) for a in args.alphas.split(",")):
        traces = {}
        for p in [1] + workers:
            cfg = RunConfig(problem="rastrigin", dim=args.dim, instance=1,
                            mode="serial" if p == 1 else args.mode, workers=p, alpha=alpha,
                            max_evals=args.max_evals, t_max=args.t_max, trials=args.trials, seed=args.seed)
            traces[p] = run_experiment(cfg, jobs=args.jobs)
        rep = compute_speedup(traces, num_targets=args.targets)
        reports[str(alpha)] = rep.to_dict()
        print(f"alpha {alpha:g}")
        if rep.empty:
            print(f"  {rep.note}")
            continue
        for j, err in enumerate(rep.errors):
            cells = "  ".join(f"S({p})={rep.speedup[p][j]:5.2f}+-{rep.speedup_stderr[p][j]:.2f}" for p in workers)
            print(f"  error {err:9.3g}  {cells}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(reports, fh, indent=1)


if __name__ == "__main__":
    main()
