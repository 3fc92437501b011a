"""Surrogate optimization strategy for serial, batch-synchronous and asynchronous runs.

The strategy is a pure state machine. A controller asks it for a proposal
whenever a worker is free (:meth:`SurrogateStrategy.propose_action`) and
reports evaluation progress through record callbacks. It never evaluates
anything itself and never blocks.

Asynchronous mode proposes one point per free worker as soon as the initial
design has been dispatched. Synchronous mode evaluates the whole design,
then proposes batches of ``p`` points and waits for each batch to finish
before refitting. Serial mode is synchronous mode with ``p = 1``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import auxiliary as aux
from .controller import Proposal
from .design import generate, realize
from .errors import ConfigError, ProtocolError
from .gp import GaussianProcess
from .rbf import KERNELS, ConstantTail, LinearTail, RbfSurrogate, median_cap

__all__ = ["Hyperparameters", "SamplingState", "SurrogateStrategy", "MODES", "SEARCHES"]

logger = logging.getLogger(__name__)

MODES = ("serial", "sync", "async")
SEARCHES = ("dycors", "srbf", "uniform", "ei", "lcb")


@dataclass
class Hyperparameters:
    """Tuning constants; lengths are in unit-hypercube coordinates.

    ``fail_tol`` and ``max_fail`` default to values derived from the
    dimension and the number of workers (see :meth:`SurrogateStrategy.fail_tolerance`).
    """

    num_cand_per_dim: int = 100
    weights: tuple = aux.WEIGHT_PATTERN
    sigma_init: float = 0.1
    sigma_min: float = 0.1 * 0.5**6
    sigma_max: float | None = None
    dtol: float = 0.0025
    succ_tol: int = 3
    fail_tol: int | None = None
    max_fail: int | None = None
    improvement_tol: float = 1e-3
    abs_improvement_tol: float = 1e-8
    retries: int = 1
    restarts: bool = True
    xi: float = 0.0
    kappa: float = 2.0


@dataclass
class SamplingState:
    """Sampling radius and the success/failure bookkeeping around it."""

    sigma_init: float = 0.1
    sigma_min: float = 0.1 * 0.5**6
    sigma_max: float = 0.1
    succ_tol: int = 3
    fail_tol: int = 4
    max_fail: int = 16
    tol: float = 1e-3
    abs_tol: float = 1e-8
    sigma: float = 0.1
    c_succ: int = 0
    c_fail: int = 0
    epoch: int = 0
    stagnant: int = 0
    f_best: float = math.inf
    x_best: list | None = None

    def __post_init__(self):
        self.sigma = self.sigma_init

    def threshold(self, ref: float) -> float:
        return self.tol * abs(ref) if ref != 0 else self.abs_tol

    def observe(self, value, x):
        """Track the best point without touching the counters."""
        if value < self.f_best:
            self.f_best = float(value)
            self.x_best = list(map(float, x))

    def adjust(self, value, x, launch_epoch=None, count=1):
        """Fold one completed evaluation (or a batch minimum) into the state.

        Significance is judged against the best value *before* this update.
        Counter updates are skipped for evaluations launched before the last
        radius change; the best point is always updated.

        :param count: Evaluations this update stands for (batch size in
            synchronous mode), used for the stagnation count.
        """
        prev = self.f_best
        self.observe(value, x)
        significant = value < prev - self.threshold(prev) if math.isfinite(prev) else True
        self.stagnant = 0 if significant else self.stagnant + count
        if launch_epoch is not None and launch_epoch < self.epoch:
            return
        if significant:
            self.c_succ += 1
            self.c_fail = 0
        elif value >= prev:
            self.c_succ = 0
            self.c_fail += 1
        if self.c_succ >= self.succ_tol:
            self._set_sigma(min(2.0 * self.sigma, self.sigma_max))
        elif self.c_fail >= self.fail_tol:
            self._set_sigma(max(0.5 * self.sigma, self.sigma_min))

    def _set_sigma(self, sigma):
        self.c_succ = 0
        self.c_fail = 0
        if sigma != self.sigma:
            self.sigma = sigma
            self.epoch += 1

    @property
    def converged(self) -> bool:
        return self.sigma <= self.sigma_min and self.stagnant >= self.max_fail

    def reset(self):
        self.sigma = self.sigma_init
        self.c_succ = self.c_fail = self.stagnant = 0
        self.f_best = math.inf
        self.x_best = None
        self.epoch += 1


@dataclass
class _Entry:
    x: list
    kind: str
    run: int
    retries: int = 0
    epoch: int | None = None


class SurrogateStrategy:
    """Surrogate optimization driven by controller events.

    :param problem: :class:`~asyncsot.problems.Problem`
    :param max_evals: Budget of completed evaluations
    :param mode: ``"serial"``, ``"sync"`` or ``"async"``
    :param workers: Number of workers ``p`` (batch size in sync mode)
    :param design: Design kind, ``"slhd"``, ``"lhd"`` or ``"factorial2"``
    :param design_size: Requested design size; raised to ``p + q - 1`` if smaller
    :param surrogate: ``"rbf"`` or ``"gp"``
    :param search: ``"dycors"``, ``"srbf"``, ``"uniform"``, ``"ei"`` or ``"lcb"``
    :param num_cand: Candidates per proposal, default ``100 d``
    :param kernel: RBF kernel name
    :param tail: ``"linear"`` or ``"constant"``
    :param eta: RBF regularization
    :param cap_values: Median-cap function values before fitting the RBF
    :param hyper: :class:`Hyperparameters`
    :param seed: Seed or ``numpy.random.Generator``
    """

    def __init__(self, problem, max_evals, mode="async", workers=1, design="slhd",
                 design_size=None, surrogate="rbf", search="dycors", num_cand=None,
                 kernel="cubic", tail="linear", eta=1e-8, cap_values=False,
                 hyper=None, seed=None):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if search not in SEARCHES:
            raise ConfigError(f"search must be one of {SEARCHES}")
        if surrogate not in ("rbf", "gp"):
            raise ConfigError("surrogate must be 'rbf' or 'gp'")
        if search in ("ei", "lcb") and surrogate != "gp":
            raise ConfigError(f"{search} needs the gp surrogate")
        if workers < 1:
            raise ConfigError("need at least one worker")
        if mode == "serial":
            workers = 1
        self.problem = problem
        self.dim = d = problem.dim
        self.max_evals = int(max_evals)
        self.mode = mode
        self.workers = int(workers)
        self.design_kind = design
        self.surrogate_kind = surrogate
        self.search = search
        self.hyper = hyper or Hyperparameters()
        self.num_cand = int(num_cand or self.hyper.num_cand_per_dim * d)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        if surrogate == "rbf":
            kern = KERNELS[kernel]()
            tl = LinearTail() if tail == "linear" else ConstantTail()
            self.surrogate = RbfSurrogate(d, kern, tl, eta=eta,
                                          value_transform=median_cap if cap_values else None)
            q_min = self.surrogate.m
        else:
            self.surrogate = GaussianProcess()
            q_min = 2
        self.q_min = q_min

        need = self.workers + q_min - 1
        if design == "factorial2":
            n0 = 2**d
            if n0 < need:
                raise ConfigError(f"2-factorial design has {n0} < p + q - 1 = {need} points")
        else:
            n0 = max(design_size or 2 * (d + 1), need)
            if design == "slhd" and 3 <= n0 < 2 * d:
                # mirrored pairs span at most n/2 directions, so [1 | X] would be rank deficient
                n0 = 2 * d
        self.design_size = n0
        if self.max_evals < n0:
            raise ConfigError(f"budget {self.max_evals} smaller than the design size {n0}")

        h = self.hyper
        fail_tol = h.fail_tol or self.fail_tolerance(d, self.workers, mode)
        evals_per_fail = self.workers if mode == "sync" else 1
        max_fail = h.max_fail or 4 * fail_tol * evals_per_fail
        self.sampling = SamplingState(
            sigma_init=h.sigma_init, sigma_min=h.sigma_min,
            sigma_max=h.sigma_max if h.sigma_max is not None else h.sigma_init,
            succ_tol=h.succ_tol, fail_tol=fail_tol, max_fail=max_fail,
            tol=h.improvement_tol, abs_tol=h.abs_improvement_tol,
        )
        self.weights = aux.WeightCycle(tuple(h.weights))

        self.phase = "initial"
        self.run = 0
        self.queue = deque()
        self.pending = {}
        self.X = []
        self.fX = []
        self.new = []
        self.batch = []
        self.num_completed = 0
        self.num_failed = 0
        self.num_restarts = 0
        self.run_start = 0
        self.f_best = math.inf
        self.x_best = None
        self.terminated = False
        self._queue_design()

    # ------------------------------------------------------------- constants

    @staticmethod
    def fail_tolerance(d, p, mode="async") -> int:
        """Consecutive failures before halving the radius.

        ``p * ceil(max(4/p, d/p))`` evaluations asynchronously; synchronous
        runs count batches, so the factor ``p`` is dropped.
        """
        batches = math.ceil(max(4.0 / p, d / p))
        return batches if mode == "sync" else p * batches

    @property
    def batch_size(self) -> int:
        return 1 if self.mode == "serial" else self.workers

    @property
    def synchronous(self) -> bool:
        return self.mode in ("serial", "sync")

    # --------------------------------------------------------------- helpers

    def _canonical(self, x):
        p = self.problem
        x = np.clip(np.asarray(x, dtype=float), p.lb, p.ub)
        if p.int_var:
            idx = list(p.int_var)
            x[idx] = np.round(x[idx])
        return x

    def _queue_design(self):
        des = generate(self.design_kind, self.design_size, self.dim, self.rng)
        pts = realize(des, self.problem, self.rng)
        for x in pts:
            self.queue.append(_Entry(self._canonical(x).tolist(), "design", self.run))

    def _outstanding(self) -> int:
        return self.num_completed + len(self.pending)

    def _launched_this_run(self) -> int:
        return self._outstanding() - self.run_start

    def _design_queued(self) -> bool:
        return any(e.kind == "design" for e in self.queue)

    def _pending_this_run(self, kind=None) -> int:
        return sum(1 for e in self.pending.values()
                   if e.run == self.run and (kind is None or e.kind == kind))

    # -------------------------------------------------------------- proposals

    def propose_action(self):
        """Next action for a free worker, or ``None`` to wait."""
        if self.terminated:
            return None
        if self.num_completed >= self.max_evals:
            if self.pending:
                return None
            return self._propose_terminate()
        if self._outstanding() >= self.max_evals:
            return None
        if self.queue:
            return self._propose_eval()
        if self.phase == "initial":
            if self.synchronous and self.pending:
                return None
            self.phase = "adaptive"
        if self.synchronous and self.pending:
            return None
        num = min(self.batch_size if self.synchronous else 1,
                  self.max_evals - self._outstanding())
        if not self._generate(num):
            return None
        return self._propose_eval()

    def _propose_terminate(self):
        prop = Proposal("terminate")
        prop.add_callback(self._on_terminate)
        return prop

    def _on_terminate(self, prop):
        if prop.accepted:
            self.terminated = True
            self.phase = "done"

    def _propose_eval(self):
        entry = self.queue.popleft()
        prop = Proposal("eval", np.array(entry.x))
        prop.meta = entry
        prop.add_callback(self._on_eval_processed)
        return prop

    def _on_eval_processed(self, prop):
        entry = prop.meta
        if not prop.accepted:
            logger.warning("controller rejected point %s; dropping it", entry.x)
            return
        rec = prop.record
        entry.epoch = self.sampling.epoch
        rec.launch_epoch = entry.epoch
        self.pending[rec.id] = entry
        rec.add_callback(self.on_record_update)

    # ----------------------------------------------------------- record events

    def attach(self, record):
        """Re-subscribe to a pending record restored from a snapshot."""
        if record.id not in self.pending:
            raise ProtocolError(f"record {record.id} is not pending in this strategy")
        record.add_callback(self.on_record_update)

    def on_record_update(self, record):
        if record.status == "completed":
            self._on_complete(record)
        elif record.status == "failed":
            self._on_fail(record)
        elif record.status == "killed":
            self._on_killed(record)

    def _pop_pending(self, record):
        try:
            return self.pending.pop(record.id)
        except KeyError:
            raise ProtocolError(f"unknown record id {record.id}") from None

    def _on_complete(self, record):
        entry = self._pop_pending(record)
        self.num_completed += 1
        value = float(record.value)
        if value < self.f_best:
            self.f_best = value
            self.x_best = list(entry.x)
        if entry.run != self.run:
            return  # launched before a restart: counts for budget and best only
        u = self.problem.to_unit(np.array(entry.x))
        self.new.append((record.id, u, value))
        if entry.kind == "design":
            self.sampling.observe(value, u)
        elif self.synchronous:
            self.batch.append((record.id, u, value))
            self._maybe_close_batch()
        else:
            self.sampling.adjust(value, u, launch_epoch=entry.epoch)
            self._maybe_restart()

    def _on_fail(self, record):
        entry = self._pop_pending(record)
        self.num_failed += 1
        if entry.run == self.run and entry.retries < self.hyper.retries:
            entry.retries += 1
            self.queue.appendleft(entry)
        else:
            logger.info("dropping failed point %s", entry.x)
            self._maybe_close_batch()

    def _on_killed(self, record):
        self._pop_pending(record)
        self._maybe_close_batch()

    def _maybe_close_batch(self):
        if not self.synchronous or not self.batch:
            return
        if self._pending_this_run("adaptive") or any(e.kind == "adaptive" for e in self.queue):
            return
        rid, u, value = min(sorted(self.batch, key=lambda t: t[0]), key=lambda t: t[2])
        self.sampling.adjust(value, u, count=len(self.batch))
        self.batch = []
        self._maybe_restart()

    def _maybe_restart(self):
        if self.hyper.restarts and self.sampling.converged:
            self.restart()

    def restart(self):
        """Drop the surrogate and start over with a fresh design.

        Evaluations still in flight are neither fitted nor used for the
        radius when they finish.
        """
        logger.info("restart %d after %d evaluations", self.num_restarts + 1, self.num_completed)
        self.num_restarts += 1
        self.run += 1
        self.run_start = self._outstanding()
        self.surrogate.reset()
        self.X, self.fX, self.new, self.batch = [], [], [], []
        self.queue.clear()
        self.sampling.reset()
        self.phase = "initial"
        self._queue_design()

    # -------------------------------------------------------- auxiliary problem

    def _refit(self):
        if self.new:
            fresh = sorted(self.new, key=lambda t: t[0])
            self.new = []
            kept_x, kept_f = [], []
            for _, u, v in fresh:
                pts = np.array(self.X + kept_x).reshape(-1, self.dim)
                if pts.size and cdist(u[None, :], pts).min() <= 1e-12:
                    continue
                kept_x.append(u.tolist())
                kept_f.append(v)
            if kept_x:
                self.X.extend(kept_x)
                self.fX.extend(kept_f)
                if self.surrogate_kind == "rbf":
                    self.surrogate.add_points(np.array(kept_x), np.array(kept_f))
        if self.surrogate_kind == "gp":
            if len(self.X) < 2:
                return False
            self.surrogate.fit(np.array(self.X), np.array(self.fX), rng=self.rng)
            return True
        return self.surrogate.ready

    def _generate(self, num):
        if not self._refit():
            if self.pending:
                return False
            # lost too many design points to failures: start over
            self.restart()
            return True
        rng = self.rng
        s = self.sampling
        if self.search == "dycors":
            n0 = self.design_size
            nmax = max(self.max_evals - self.run_start, n0 + 2)
            cand = aux.candidates_dycors(s.x_best, s.sigma, self.problem, rng, self.num_cand,
                                         self._launched_this_run(), n0, nmax)
        elif self.search == "srbf":
            cand = aux.candidates_srbf(s.x_best, s.sigma, self.problem, rng, self.num_cand)
        else:
            cand = aux.candidates_uniform(self.problem, rng, self.num_cand)

        busy = [self.problem.to_unit(np.array(e.x)) for e in self.pending.values()]
        avoid = np.array(self.X + [b.tolist() for b in busy]).reshape(-1, self.dim)
        h = self.hyper
        if self.search in ("ei", "lcb"):
            mu, var = self.surrogate.predict_mv(cand)
            sd = np.sqrt(var)
            if self.search == "ei":
                scores = aux.expected_improvement(mu, sd, s.f_best, h.xi)
                picks = aux.select_acquisition(cand, scores, avoid, num, h.dtol, maximize=True)
            else:
                scores = aux.lower_confidence_bound(mu, sd, h.kappa)
                picks = aux.select_acquisition(cand, scores, avoid, num, h.dtol, maximize=False)
        else:
            fhat = self.surrogate.predict(cand)
            picks = aux.select_candidates(cand, fhat, avoid, self.weights.take(num), h.dtol)
        for j in picks:
            x = self._canonical(self.problem.from_unit(cand[j]))
            self.queue.append(_Entry(x.tolist(), "adaptive", self.run))
        return True

    # --------------------------------------------------------------- snapshots

    def state_dict(self) -> dict:
        return {
            "phase": self.phase,
            "run": self.run,
            "run_start": self.run_start,
            "queue": [asdict(e) for e in self.queue],
            "pending": {str(k): asdict(e) for k, e in self.pending.items()},
            "X": self.X,
            "fX": self.fX,
            "new": [[rid, u.tolist(), v] for rid, u, v in self.new],
            "batch": [[rid, u.tolist(), v] for rid, u, v in self.batch],
            "surrogate_batches": list(getattr(self.surrogate, "batches", [])),
            "num_completed": self.num_completed,
            "num_failed": self.num_failed,
            "num_restarts": self.num_restarts,
            "f_best": self.f_best,
            "x_best": self.x_best,
            "terminated": self.terminated,
            "sampling": asdict(self.sampling),
            "weight_index": self.weights.index,
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict, requeue_pending: bool = False):
        """Restore from :meth:`state_dict`.

        :param requeue_pending: Put evaluations that were in flight back at
            the front of the queue (used when the controller's own state was
            not restored, e.g. after a crash of a real-time run).
        """
        self.phase = state["phase"]
        self.run = state["run"]
        self.run_start = state["run_start"]
        self.queue = deque(_Entry(**e) for e in state["queue"])
        self.pending = {int(k): _Entry(**e) for k, e in state["pending"].items()}
        self.X = [list(x) for x in state["X"]]
        self.fX = list(state["fX"])
        self.new = [(rid, np.array(u), v) for rid, u, v in state["new"]]
        self.batch = [(rid, np.array(u), v) for rid, u, v in state["batch"]]
        self.num_completed = state["num_completed"]
        self.num_failed = state["num_failed"]
        self.num_restarts = state["num_restarts"]
        self.f_best = state["f_best"]
        self.x_best = state["x_best"]
        self.terminated = state["terminated"]
        samp = dict(state["sampling"])
        sigma = samp.pop("sigma")
        self.sampling = SamplingState(**{k: v for k, v in samp.items()})
        self.sampling.sigma = sigma
        self.weights.index = state["weight_index"]
        self.rng.bit_generator.state = state["rng"]
        if self.surrogate_kind == "rbf":
            self.surrogate.load_state_dict({
                "X": self.X, "fX": self.fX,
                "batches": state["surrogate_batches"], "eta": self.surrogate.eta,
            })
        if requeue_pending:
            for rid in sorted(self.pending, reverse=True):
                entry = self.pending.pop(rid)
                entry.epoch = None
                self.queue.appendleft(entry)
        return self
