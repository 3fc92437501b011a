"""Benchmark harness: evaluation-time models, seeded multi-trial runs, speedup.

Each trial runs the simulated-time controller, so fitting and candidate
selection cost nothing on the simulated clock. Trial ``k`` of an experiment
uses seed ``seed + k``; the strategy and the duration draws get independent
streams spawned from it, so the serial and synchronous methods produce the
same evaluation sequence for any time model.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import ConstantTime, SimController
from .errors import ConfigError
from .problems import get_problem
from .strategy import Hyperparameters, SurrogateStrategy
from .trace import ProgressTrace

__all__ = [
    "ParetoTimeModel",
    "ConstantTime",
    "RunConfig",
    "run_trial",
    "run_experiment",
    "SpeedupReport",
    "compute_speedup",
    "emit_traces",
    "load_traces",
    "emit_report",
    "load_report",
]

CSV_COLUMNS = ["trial", "eval_index", "t_start", "t_end", "worker", "f", "best_f"]


class ParetoTimeModel:
    """Pareto durations with density ``alpha b^alpha / x^(alpha+1)`` on ``[b, inf)``.

    :param alpha: Shape; must exceed 1 so the mean is finite
    :param b: Scale (the minimum duration)
    """

    def __init__(self, alpha, b=1.0):
        if not alpha > 1:
            raise ConfigError("Pareto shape must exceed 1 (the mean is infinite otherwise)")
        if not b > 0:
            raise ConfigError("Pareto scale must be positive")
        self.alpha = float(alpha)
        self.b = float(b)

    def inverse_cdf(self, u):
        """Duration at upper-tail probability ``u`` in ``(0, 1]``."""
        return self.b * np.power(u, -1.0 / self.alpha)

    def sample(self, rng, size=None):
        u = 1.0 - rng.random(size)  # in (0, 1]
        x = self.inverse_cdf(u)
        return float(x) if size is None else x

    @property
    def mean(self) -> float:
        return self.alpha * self.b / (self.alpha - 1.0)

    @property
    def variance(self) -> float:
        a = self.alpha
        if a <= 2:
            return math.inf
        return a * self.b**2 / ((a - 1.0) ** 2 * (a - 2.0))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class RunConfig:
    """One benchmark configuration.

    ``alpha=None`` means every evaluation takes one time unit.
    ``instance`` shifts the problem's optimum (same shift in every trial).
    """

    problem: str = "rastrigin"
    dim: int = 10
    mode: str = "async"
    workers: int = 1
    alpha: float | None = 2.84
    max_evals: int = 400
    t_max: float = 50.0
    trials: int = 30
    seed: int = 0
    design: str = "slhd"
    design_size: int | None = None
    surrogate: str = "rbf"
    strategy: str = "dycors"
    kernel: str = "cubic"
    eta: float = 1e-8
    num_cand: int | None = None
    instance: int | None = None
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def time_model(self):
        return ConstantTime(1.0) if self.alpha is None else ParetoTimeModel(self.alpha)

    def make_problem(self):
        return get_problem(self.problem, self.dim, instance=self.instance)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        d = dict(d)
        h = d.pop("hyper", None)
        if h is not None:
            h = dict(h)
            h["weights"] = tuple(h["weights"])
            d["hyper"] = Hyperparameters(**h)
        return cls(**d)


def trial_streams(seed, trial):
    """Strategy and duration generators for one trial."""
    ss = np.random.SeedSequence(seed + trial)
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def build_trial(config: RunConfig, trial: int = 0, problem=None):
    """Strategy and controller for one trial, not yet run."""
    problem = problem or config.make_problem()
    srng, trng = trial_streams(config.seed, trial)
    strat = SurrogateStrategy(problem, config.max_evals, mode=config.mode,
                              workers=config.workers, design=config.design,
                              design_size=config.design_size,
                              surrogate=config.surrogate, search=config.strategy,
                              kernel=config.kernel, eta=config.eta, num_cand=config.num_cand,
                              hyper=config.hyper, seed=srng)
    ctrl = SimController(strat, problem, workers=config.workers,
                         time_model=config.time_model(), t_max=config.t_max, seed=trng)
    ctrl.trace.trial = trial
    ctrl.trace.config = config.to_dict()
    return strat, ctrl


def run_trial(config: RunConfig, trial: int = 0, problem=None) -> ProgressTrace:
    _, ctrl = build_trial(config, trial, problem)
    return ctrl.run().trace


def run_experiment(config: RunConfig, trials=None, jobs=1) -> list:
    """Run ``config.trials`` seeded trials (or the given trial indices).

    :param jobs: Worker processes; results do not depend on it
    """
    idx = list(range(config.trials) if trials is None else trials)
    if jobs > 1 and len(idx) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_trial, [config] * len(idx), idx))
    problem = config.make_problem()
    return [run_trial(config, k, problem) for k in idx]


# ------------------------------------------------------------------ speedup


@dataclass
class SpeedupReport:
    """Time-to-target and relative speedup per worker count.

    ``times[p][j]`` is the mean time to reach ``targets[j]`` over the trials
    that reached it, ``stderr`` its standard error, ``reached`` the number
    of trials included and ``excluded`` the number that never got there.
    ``speedup[p][j] = times[1][j] / times[p][j]``.
    """

    targets: list
    errors: list
    intersection: list | None
    f_opt: float
    times: dict
    stderr: dict
    reached: dict
    excluded: dict
    speedup: dict
    speedup_stderr: dict
    note: str = ""

    @property
    def empty(self) -> bool:
        return not self.targets

    def to_dict(self) -> dict:
        def keyed(m):
            return {str(k): v for k, v in m.items()}
        out = asdict(self)
        for k in ("times", "stderr", "reached", "excluded", "speedup", "speedup_stderr"):
            out[k] = keyed(getattr(self, k))
        return out

    @classmethod
    def from_dict(cls, d) -> "SpeedupReport":
        d = dict(d)
        for k in ("times", "stderr", "reached", "excluded", "speedup", "speedup_stderr"):
            d[k] = {int(p): v for p, v in d[k].items()}
        return cls(**d)


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(np.mean(v)), se


def _time_to_error(trace, err, f_opt):
    # same comparison as achieved_range, so range endpoints are always reached
    for r in trace.rows:
        if r.best - f_opt <= err:
            return r.t_end
    return math.inf


def achieved_range(traces, f_opt):
    """Absolute errors every trial in ``traces`` passed through: ``(lo, hi)``.

    A trial's best-so-far error sweeps from its first value down to its
    final best, so every trial reaches any target in ``[lo, hi]``.
    """
    lo = max(t.rows[-1].best - f_opt for t in traces)
    hi = min(t.rows[0].best - f_opt for t in traces)
    return lo, hi


def compute_speedup(traces_by_workers: dict, num_targets: int = 10, f_opt=0.0,
                    floor=1e-12, targets=None) -> SpeedupReport:
    """Relative speedup over targets in the intersection of achieved ranges.

    :param traces_by_workers: ``{p: [ProgressTrace, ...]}``, must include ``p = 1``
    :param num_targets: Targets, log-spaced in absolute error
    :param f_opt: True optimum used for the error
    :param floor: Smallest error considered (keeps the log scale finite)
    :param targets: Explicit target values; skips the intersection, and
        trials that never reach a target are excluded from its mean
    """
    if 1 not in traces_by_workers:
        raise ConfigError("speedup needs the one-worker runs as the baseline")
    if len(traces_by_workers) < 2:
        raise ConfigError("speedup needs at least one parallel configuration")
    if num_targets < 1:
        raise ConfigError("need at least one target")
    for p, tr in traces_by_workers.items():
        if not tr or any(len(t) == 0 for t in tr):
            raise ConfigError(f"empty traces for p={p}")
    keys = sorted(traces_by_workers)
    ranges = [achieved_range(traces_by_workers[p], f_opt) for p in keys]
    lo = max(max(r[0] for r in ranges), floor)
    hi = min(r[1] for r in ranges)
    empty = {p: [] for p in keys}
    if targets is None and not lo <= hi:
        return SpeedupReport([], [], None, f_opt, empty, dict(empty), dict(empty), dict(empty),
                             dict(empty), dict(empty), note="empty intersection of achieved ranges")
    if targets is not None:
        targets = [float(t) for t in targets]
        errors = [t - f_opt for t in targets]
    else:
        errors = np.geomspace(hi, lo, num_targets) if num_targets > 1 else np.array([hi])
        # geomspace may round just outside [lo, hi]
        errors = np.clip(errors, lo, hi).tolist()
        targets = [f_opt + e for e in errors]
    times, se, reached, excluded = {}, {}, {}, {}
    for p in keys:
        times[p], se[p], reached[p], excluded[p] = [], [], [], []
        for err in errors:
            hit = [_time_to_error(t, err, f_opt) for t in traces_by_workers[p]]
            ok = [h for h in hit if math.isfinite(h)]
            m, s = _mean_se(ok)
            times[p].append(m)
            se[p].append(s)
            reached[p].append(len(ok))
            excluded[p].append(len(hit) - len(ok))
    speedup, speedup_se = {}, {}
    for p in keys:
        speedup[p], speedup_se[p] = [], []
        for j in range(len(targets)):
            t1, tp = times[1][j], times[p][j]
            s = t1 / tp if tp > 0 else math.nan
            rel = math.hypot(se[1][j] / t1, se[p][j] / tp) if t1 > 0 and tp > 0 else math.nan
            speedup[p].append(s)
            speedup_se[p].append(s * rel)
    return SpeedupReport(targets, errors, [lo, hi] if lo <= hi else None, f_opt, times, se, reached, excluded,
                         speedup, speedup_se)


# ------------------------------------------------------------------ output


def _fmt(v):
    return repr(float(v))


def emit_traces(traces, path, fmt="csv", dump_points=False):
    """Write traces as CSV (one row per completed evaluation) or JSON."""
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({"traces": [t.to_dict() for t in traces]}, fh)
        return
    if fmt != "csv":
        raise ConfigError(f"unknown format {fmt!r}")
    dim = 0
    if dump_points:
        dims = {len(r.point) for t in traces for r in t.rows}
        if len(dims) > 1:
            raise ConfigError("traces mix dimensions")
        dim = dims.pop() if dims else int(traces[0].config.get("dim", 0)) if traces else 0
    header = CSV_COLUMNS + [f"x{i}" for i in range(dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in traces:
            for r in t.rows:
                row = [t.trial, r.eval_index, _fmt(r.t_start), _fmt(r.t_end), r.worker,
                       _fmt(r.value), _fmt(r.best)]
                if dump_points:
                    row += [_fmt(v) for v in r.point]
                w.writerow(row)


def load_traces(path) -> list:
    """Read traces written by :func:`emit_traces` (CSV or JSON by content)."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return [ProgressTrace.from_dict(d) for d in json.loads(text)["traces"]]
    rows = list(csv.DictReader(text.splitlines()))
    by_trial = {}
    for r in rows:
        t = by_trial.setdefault(int(r["trial"]), ProgressTrace(trial=int(r["trial"])))
        xs = sorted((k for k in r if k.startswith("x")), key=lambda k: int(k[1:]))
        t.append(float(r["t_start"]), float(r["t_end"]), int(r["worker"]), float(r["f"]),
                 [float(r[k]) for k in xs])
    return [by_trial[k] for k in sorted(by_trial)]


def emit_report(report: SpeedupReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)


def load_report(path) -> SpeedupReport:
    with open(path) as fh:
        return SpeedupReport.from_dict(json.load(fh))
