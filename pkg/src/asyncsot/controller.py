"""Controllers mediate between a strategy and the workers.

The protocol: whenever a worker is free the controller asks the strategy
for a :class:`Proposal`. It accepts or rejects it, and for an accepted
evaluation it creates an :class:`EvalRecord` that the strategy watches
through callbacks. All strategy calls and record mutations happen on the
controller's own thread.

Three controllers are provided:

* :class:`SerialController` evaluates inline.
* :class:`SimController` replays evaluation durations drawn from a time
  model on a simulated clock. Objective values are computed at dispatch,
  completions are delivered at ``now + duration``, and everything is
  deterministic for a fixed seed.
* :class:`ThreadController` drives real workers (threads, subprocesses or
  TCP peers, see :mod:`asyncsot.tcp`) through a message queue.
"""

from __future__ import annotations

import heapq
import logging
import math
import queue
import re
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ProtocolError
from .trace import ProgressTrace

__all__ = [
    "Proposal",
    "EvalRecord",
    "RunResult",
    "ConstantTime",
    "SerialController",
    "SimController",
    "ThreadController",
    "ThreadWorker",
    "ProcessWorker",
    "sim_run",
]

logger = logging.getLogger(__name__)

TERMINAL = ("completed", "killed", "failed")


class Proposal:
    """A requested action: ``"eval"`` (point), ``"kill"`` (record id) or ``"terminate"``.

    Callbacks run exactly once, when the controller accepts or rejects.
    """

    def __init__(self, action, *args):
        if action not in ("eval", "kill", "terminate"):
            raise ValueError(f"unknown action {action!r}")
        self.action = action
        self.args = args
        self.callbacks = []
        self.accepted = None
        self.record = None
        self.meta = None

    def add_callback(self, cb):
        self.callbacks.append(cb)

    def _process(self, accepted, record=None):
        if self.accepted is not None:
            raise ProtocolError("proposal processed twice")
        self.accepted = accepted
        self.record = record
        for cb in self.callbacks:
            cb(self)

    def accept(self, record=None):
        self._process(True, record)

    def reject(self):
        self._process(False)


class EvalRecord:
    """Lifecycle of one evaluation: pending -> running -> completed/killed/failed."""

    def __init__(self, rid, point):
        self.id = rid
        self.point = np.asarray(point, dtype=float)
        self.status = "pending"
        self.value = None
        self.partial_value = None
        self.reason = None
        self.launch_epoch = None
        self.t_start = None
        self.t_end = None
        self.worker = None
        self.callbacks = []

    def add_callback(self, cb):
        self.callbacks.append(cb)

    def _notify(self):
        for cb in list(self.callbacks):
            cb(self)

    def _to(self, status, t):
        allowed = {"pending": ("running",), "running": TERMINAL}
        if status not in allowed.get(self.status, ()):
            raise ProtocolError(f"record {self.id}: illegal transition {self.status} -> {status}")
        self.status = status
        if status == "running":
            self.t_start = t
        else:
            self.t_end = t

    def running(self, t, worker):
        self.worker = worker
        self._to("running", t)
        self._notify()

    def update(self, value):
        if self.status != "running":
            raise ProtocolError(f"record {self.id}: update while {self.status}")
        self.partial_value = float(value)
        self._notify()

    def complete(self, value, t):
        self._to("completed", t)
        self.value = float(value)
        self._notify()

    def fail(self, t, reason="failed"):
        self._to("failed", t)
        self.reason = reason
        self._notify()

    def kill(self, t):
        self._to("killed", t)
        self._notify()

    @property
    def is_done(self) -> bool:
        return self.status in TERMINAL

    def to_dict(self) -> dict:
        return {
            "id": self.id, "point": self.point.tolist(), "status": self.status,
            "value": self.value, "partial_value": self.partial_value, "reason": self.reason,
            "launch_epoch": self.launch_epoch, "t_start": self.t_start, "t_end": self.t_end,
            "worker": self.worker,
        }

    @classmethod
    def from_dict(cls, d) -> "EvalRecord":
        rec = cls(d["id"], d["point"])
        for k in ("status", "value", "partial_value", "reason", "launch_epoch",
                  "t_start", "t_end", "worker"):
            setattr(rec, k, d[k])
        return rec


@dataclass
class RunResult:
    x_best: np.ndarray | None
    f_best: float
    trace: ProgressTrace


class ConstantTime:
    """Every evaluation takes ``duration``."""

    def __init__(self, duration=1.0):
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.duration = float(duration)

    def sample(self, rng):
        return self.duration


def _validator(problem):
    check = getattr(problem, "check", None)
    return check if callable(check) else (lambda x: np.asarray(x, dtype=float))


def _objective(problem):
    return getattr(problem, "eval", problem)


class _Base:
    def __init__(self, strategy, problem=None):
        self.strategy = strategy
        self.problem = problem
        self.records = {}
        self.next_id = 0
        self.trace = ProgressTrace()
        self.listeners = []
        self.terminated = False
        self.f_best = math.inf
        self.x_best = None
        self._check = _validator(problem)

    def add_listener(self, fn):
        """Call ``fn(controller)`` after every state change."""
        self.listeners.append(fn)

    def _changed(self):
        for fn in self.listeners:
            fn(self)

    def _new_record(self, point):
        rec = EvalRecord(self.next_id, point)
        self.next_id += 1
        self.records[rec.id] = rec
        return rec

    def _record(self, rid):
        try:
            return self.records[rid]
        except KeyError:
            raise ProtocolError(f"unknown record id {rid}") from None

    def _feasible(self, prop):
        try:
            self._check(prop.args[0])
            return True
        except DomainError as exc:
            logger.warning("rejecting infeasible proposal: %s", exc)
            return False

    def _finish(self, rec, value, t):
        if value is None or not math.isfinite(value):
            rec.fail(t, "non-finite value")
            return
        rec.complete(value, t)
        self.trace.append(rec.t_start, t, rec.worker, value, rec.point)
        if value < self.f_best:
            self.f_best = float(value)
            self.x_best = rec.point.copy()

    def _handle_kill(self, prop):
        rid = prop.args[0]
        rec = self._record(rid)
        prop.accept()
        self.kill(rec.id)

    def _handle_terminate(self, prop):
        prop.accept()
        self.terminated = True

    def result(self) -> RunResult:
        return RunResult(self.x_best, self.f_best, self.trace)


class SerialController(_Base):
    """Evaluates each accepted proposal immediately on the calling thread.

    Times are wall-clock seconds since :meth:`run` started.
    """

    def __init__(self, strategy, problem):
        super().__init__(strategy, problem)
        self._eval = _objective(problem)
        self._t0 = None

    def _now(self):
        return time.perf_counter() - self._t0

    def kill(self, rid):
        """Nothing runs concurrently, so there is never anything to kill."""
        self._record(rid)
        return False

    def run(self) -> RunResult:
        self._t0 = time.perf_counter()
        while not self.terminated:
            prop = self.strategy.propose_action()
            if prop is None:
                raise ProtocolError("strategy proposed nothing with no evaluation outstanding")
            if prop.action == "terminate":
                self._handle_terminate(prop)
            elif prop.action == "kill":
                self._handle_kill(prop)
            elif not self._feasible(prop):
                prop.reject()
            else:
                rec = self._new_record(prop.args[0])
                prop.accept(rec)
                rec.running(self._now(), 0)
                try:
                    value = float(self._eval(rec.point))
                except Exception as exc:  # evaluation crash feeds the retry path
                    logger.warning("evaluation %d failed: %s", rec.id, exc)
                    rec.fail(self._now(), type(exc).__name__)
                else:
                    self._finish(rec, value, self._now())
            self._changed()
        return self.result()


class SimController(_Base):
    """Deterministic simulated-time controller.

    :param strategy: Strategy to drive
    :param problem: Objective (``Problem`` or callable)
    :param workers: Number of simulated workers
    :param time_model: Object with ``sample(rng) -> duration > 0``
    :param t_max: Simulated time budget
    :param seed: Seed for the duration (and failure) draws
    :param failure_rate: Probability that an evaluation crashes
    :param honor_kills: Whether workers obey kill requests
    """

    def __init__(self, strategy, problem, workers=1, time_model=None, t_max=math.inf,
                 seed=None, failure_rate=0.0, honor_kills=True):
        super().__init__(strategy, problem)
        if workers < 1:
            raise ConfigError("need at least one worker")
        self._eval = _objective(problem)
        self.time_model = time_model or ConstantTime(1.0)
        self.t_max = float(t_max)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.failure_rate = float(failure_rate)
        self.honor_kills = honor_kills
        self.now = 0.0
        self.seq = 0
        self.events = []
        self.outcomes = {}
        self.busy = {}
        self.idle = list(range(workers))
        self.next_worker = workers
        self.timed_out = False

    @property
    def num_workers(self) -> int:
        return len(self.idle) + len(self.busy)

    # ------------------------------------------------------------ workers

    def add_worker(self) -> int:
        wid = self.next_worker
        self.next_worker += 1
        self.idle.append(wid)
        self.idle.sort()
        return wid

    def remove_worker(self, wid):
        """Remove a worker; a busy worker abandons its evaluation (recorded as failed)."""
        if wid in self.idle:
            self.idle.remove(wid)
            return
        if wid not in self.busy:
            raise ProtocolError(f"unknown worker {wid}")
        if self.num_workers == 1:
            raise ProtocolError("cannot remove the last worker while it has work")
        rid = self.busy.pop(wid)
        self.outcomes.pop(rid, None)
        self.records[rid].fail(self.now, "worker removed")
        self._changed()

    def crash_worker(self, wid):
        """Worker dies mid-evaluation and is replaced by a fresh one."""
        rid = self.busy.pop(wid)
        self.outcomes.pop(rid, None)
        self.idle.append(self.next_worker)
        self.next_worker += 1
        self.idle.sort()
        self.records[rid].fail(self.now, "worker crashed")
        self._changed()

    def kill(self, rid):
        """Ask the worker running ``rid`` to stop; returns whether it did."""
        rec = self._record(rid)
        if rec.is_done or not self.honor_kills:
            return False
        wid = rec.worker
        self.busy.pop(wid)
        self.outcomes.pop(rid, None)
        self.idle.append(wid)
        self.idle.sort()
        rec.kill(self.now)
        return True

    # ------------------------------------------------------------ loop

    def _dispatch(self):
        while self.idle and not self.terminated:
            prop = self.strategy.propose_action()
            if prop is None:
                return
            if prop.action == "terminate":
                self._handle_terminate(prop)
            elif prop.action == "kill":
                self._handle_kill(prop)
            elif not self._feasible(prop):
                prop.reject()
            else:
                self._launch(prop)
            self._changed()

    def _launch(self, prop):
        wid = self.idle.pop(0)
        rec = self._new_record(prop.args[0])
        prop.accept(rec)
        rec.running(self.now, wid)
        self.busy[wid] = rec.id
        duration = float(self.time_model.sample(self.rng))
        if not duration > 0:
            raise ConfigError("time model produced a non-positive duration")
        if self.failure_rate and self.rng.random() < self.failure_rate:
            outcome = ["fail", "simulated crash"]
        else:
            try:
                outcome = ["ok", float(self._eval(rec.point))]
            except Exception as exc:
                outcome = ["fail", type(exc).__name__]
        self.outcomes[rec.id] = outcome
        heapq.heappush(self.events, (self.now + duration, self.seq, rec.id))
        self.seq += 1

    def _deliver(self, rid, t):
        outcome = self.outcomes.pop(rid, None)
        if outcome is None:
            return  # killed or abandoned earlier
        rec = self.records[rid]
        self.busy.pop(rec.worker)
        self.idle.append(rec.worker)
        self.idle.sort()
        kind, payload = outcome
        if kind == "ok":
            self._finish(rec, payload, t)
        else:
            rec.fail(t, payload)

    def _next_event_time(self):
        while self.events and self.events[0][2] not in self.outcomes:
            heapq.heappop(self.events)
        return self.events[0][0] if self.events else None

    def step(self) -> bool:
        """Dispatch, then deliver every completion at the next event time.

        :returns: ``False`` once the run is over.
        """
        # a snapshot can fall between two deliveries at the same time
        self._deliver_at(self.now)
        self._dispatch()
        if self.terminated:
            return False
        t = self._next_event_time()
        if t is None:
            if not self.num_workers:
                raise ConfigError("no workers")
            raise ProtocolError("strategy proposed nothing with no evaluation outstanding")
        if t > self.t_max:
            self._time_out()
            return False
        self.now = t
        self._deliver_at(t)
        return True

    def _deliver_at(self, t):
        while self._next_event_time() == t:
            _, _, rid = heapq.heappop(self.events)
            self._deliver(rid, t)
            self._changed()

    def _time_out(self):
        self.now = self.t_max
        self.timed_out = True
        for wid, rid in sorted(self.busy.items()):
            self.outcomes.pop(rid, None)
            self.records[rid].kill(self.t_max)
        self.idle = sorted(self.idle + list(self.busy))
        self.busy.clear()
        self.terminated = True
        self._changed()

    def run(self) -> RunResult:
        while self.step():
            pass
        return self.result()

    # ------------------------------------------------------------ snapshots

    def state_dict(self) -> dict:
        return {
            "now": self.now,
            "seq": self.seq,
            "events": [list(e) for e in self.events if e[2] in self.outcomes],
            "outcomes": {str(k): v for k, v in self.outcomes.items()},
            "busy": {str(k): v for k, v in self.busy.items()},
            "idle": list(self.idle),
            "next_worker": self.next_worker,
            "next_id": self.next_id,
            "records": [r.to_dict() for r in self.records.values()],
            "trace": self.trace.to_dict(),
            "f_best": self.f_best,
            "x_best": None if self.x_best is None else self.x_best.tolist(),
            "terminated": self.terminated,
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict, strategy_state: dict | None = None):
        """Restore controller state (and the strategy's, if given)."""
        if strategy_state is not None:
            self.strategy.load_state_dict(strategy_state)
        self.now = state["now"]
        self.seq = state["seq"]
        self.events = [tuple(e) for e in state["events"]]
        heapq.heapify(self.events)
        self.outcomes = {int(k): list(v) for k, v in state["outcomes"].items()}
        self.busy = {int(k): v for k, v in state["busy"].items()}
        self.idle = list(state["idle"])
        self.next_worker = state["next_worker"]
        self.next_id = state["next_id"]
        self.records = {}
        for d in state["records"]:
            rec = EvalRecord.from_dict(d)
            self.records[rec.id] = rec
        self.trace = ProgressTrace.from_dict(state["trace"])
        self.f_best = state["f_best"]
        self.x_best = None if state["x_best"] is None else np.array(state["x_best"])
        self.terminated = state["terminated"]
        self.rng.bit_generator.state = state["rng"]
        for rec in self.records.values():
            if rec.status == "running":
                self.strategy.attach(rec)
        return self


# ---------------------------------------------------------------- real workers


class ThreadWorker:
    """Evaluates a Python objective on its own thread. Ignores kill requests."""

    def __init__(self, objective, name=None):
        self.objective = _objective(objective)
        self.name = name or "thread"
        self.wid = None
        self._inbox = queue.Queue()
        self._thread = None

    def start(self, post):
        self._post = post
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            msg = self._inbox.get()
            if msg[0] == "terminate":
                return
            if msg[0] == "eval":
                _, rid, x = msg
                try:
                    value = float(self.objective(x))
                except Exception as exc:
                    self._post(("failed", self, rid, type(exc).__name__))
                else:
                    self._post(("result", self, rid, value))

    def eval(self, rid, x):
        self._inbox.put(("eval", rid, np.array(x, dtype=float)))

    def kill(self, rid):
        pass

    def terminate(self):
        self._inbox.put(("terminate",))


_FLOAT = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:inf|nan)", re.I)


def last_float(text: str) -> float:
    """Last parseable float in ``text``."""
    found = _FLOAT.findall(text)
    if not found:
        raise ValueError("no number in output")
    return float(found[-1])


class ProcessWorker:
    """Runs an external command per evaluation.

    ``template`` contains ``{x}``, replaced by the space-separated
    coordinates; the objective is the last float printed on stdout.
    Kill requests terminate the subprocess.
    """

    def __init__(self, template, name=None):
        if "{x}" not in template:
            raise ConfigError("command template needs an {x} placeholder")
        self.template = template
        self.name = name or "process"
        self.wid = None
        self._inbox = queue.Queue()
        self._proc = None
        self._current = None
        self._killed = set()
        self._lock = threading.Lock()

    def start(self, post):
        self._post = post
        threading.Thread(target=self._loop, daemon=True).start()

    def command(self, x) -> list:
        coords = " ".join(repr(float(v)) for v in x)
        return shlex.split(self.template.replace("{x}", coords))

    def _loop(self):
        while True:
            msg = self._inbox.get()
            if msg[0] == "terminate":
                return
            _, rid, x = msg
            with self._lock:
                if rid in self._killed:
                    self._post(("killed", self, rid))
                    continue
                self._proc = subprocess.Popen(self.command(x), stdout=subprocess.PIPE,
                                              stderr=subprocess.DEVNULL, text=True)
                self._current = rid
            out, _ = self._proc.communicate()
            with self._lock:
                code = self._proc.returncode
                self._proc, self._current = None, None
                killed = rid in self._killed
            if killed:
                self._post(("killed", self, rid))
                continue
            try:
                if code != 0:
                    raise RuntimeError(f"exit status {code}")
                self._post(("result", self, rid, last_float(out)))
            except (RuntimeError, ValueError) as exc:
                self._post(("failed", self, rid, str(exc).replace(" ", "_")))

    def eval(self, rid, x):
        self._inbox.put(("eval", rid, list(x)))

    def kill(self, rid):
        with self._lock:
            self._killed.add(rid)
            if self._current == rid and self._proc is not None:
                self._proc.terminate()

    def terminate(self):
        self.kill(self._current)
        self._inbox.put(("terminate",))


class ThreadController(_Base):
    """Controller for workers that run concurrently (threads, processes, TCP peers).

    Workers talk to the controller only through messages posted to a queue;
    the event loop in :meth:`run` owns every record and every strategy call.

    :param strategy: Strategy to drive
    :param problem: Used to validate proposals (optional)
    :param time_budget: Wall-clock limit in seconds
    :param idle_timeout: Give up after this many seconds without any message
    """

    def __init__(self, strategy, problem=None, time_budget=math.inf, idle_timeout=60.0):
        super().__init__(strategy, problem)
        self.time_budget = time_budget
        self.idle_timeout = idle_timeout
        self.messages = queue.Queue()
        self.workers = {}
        self.idle = []
        self.busy = {}
        self._next_worker = 0
        self._t0 = time.perf_counter()
        self.timed_out = False

    def now(self):
        return time.perf_counter() - self._t0

    def post(self, msg):
        self.messages.put(msg)

    def launch_worker(self, worker):
        """Register a worker; safe to call from any thread."""
        self.post(("hello", worker))

    def _register(self, worker):
        worker.wid = self._next_worker
        self._next_worker += 1
        self.workers[worker.wid] = worker
        self.idle.append(worker.wid)
        if getattr(worker, "_post", None) is None:
            worker.start(self.post)

    def remove_worker(self, wid):
        """Retire a worker (call from the controller thread, e.g. a listener)."""
        if wid not in self.workers:
            raise ProtocolError(f"unknown worker {wid}")
        if wid in self.busy and len(self.workers) == 1:
            raise ProtocolError("cannot remove the last worker while it has work")
        self._drop_worker(wid, "worker removed")
        self.workers.pop(wid).terminate()

    def _drop_worker(self, wid, reason):
        self.workers.get(wid)
        if wid in self.idle:
            self.idle.remove(wid)
        rid = self.busy.pop(wid, None)
        if rid is not None and not self.records[rid].is_done:
            self.records[rid].fail(self.now(), reason)

    def kill(self, rid):
        rec = self._record(rid)
        if rec.is_done:
            return False
        worker = self.workers.get(rec.worker)
        if worker is not None:
            worker.kill(rid)
        return True

    def _dispatch(self):
        while self.idle and not self.terminated:
            prop = self.strategy.propose_action()
            if prop is None:
                return
            if prop.action == "terminate":
                self._handle_terminate(prop)
            elif prop.action == "kill":
                self._handle_kill(prop)
            elif not self._feasible(prop):
                prop.reject()
            else:
                wid = self.idle.pop(0)
                rec = self._new_record(prop.args[0])
                prop.accept(rec)
                rec.running(self.now(), wid)
                self.busy[wid] = rec.id
                self.workers[wid].eval(rec.id, rec.point)
            self._changed()

    def _handle(self, msg):
        kind, src = msg[0], msg[1]
        if kind == "hello":
            self._register(src)
            return
        wid = getattr(src, "wid", None)
        if wid not in self.workers:
            return
        if kind in ("lost", "bye"):
            self._drop_worker(wid, "worker lost" if kind == "lost" else "worker left")
            self.workers.pop(wid, None)
            return
        rid = msg[2]
        rec = self.records.get(rid)
        if rec is None or rec.is_done or self.busy.get(wid) != rid:
            if kind != "update":
                logger.debug("ignoring stale %s for record %s", kind, rid)
            return
        if kind == "update":
            rec.update(msg[3])
            self.trace.updates.append((rid, self.now(), float(msg[3])))
            return
        self.busy.pop(wid)
        self.idle.append(wid)
        if kind == "result":
            self._finish(rec, msg[3], self.now())
        elif kind == "failed":
            rec.fail(self.now(), msg[3])
        elif kind == "killed":
            rec.kill(self.now())
        else:
            raise ProtocolError(f"unknown message {kind!r}")

    def _shutdown(self):
        for wid, rid in list(self.busy.items()):
            rec = self.records[rid]
            if not rec.is_done:
                self.workers[wid].kill(rid)
                rec.kill(self.now())
        self.busy.clear()
        for w in self.workers.values():
            try:
                w.terminate()
            except Exception:  # best effort on shutdown
                logger.debug("terminate failed", exc_info=True)

    def run(self) -> RunResult:
        self._t0 = time.perf_counter()
        self._last_activity = self.now()
        try:
            while not self.terminated:
                self._drain(block=False)
                self._dispatch()
                if self.terminated:
                    break
                if self.now() > self.time_budget:
                    self.timed_out = True
                    break
                if self.idle and not self.busy:
                    raise ProtocolError("strategy proposed nothing with no evaluation outstanding")
                self._drain(block=True)
        finally:
            self._shutdown()
        return self.result()

    def _drain(self, block):
        """Handle queued messages; with ``block``, wait for at least one.

        Waiting gives up when the time budget runs out, or after
        ``idle_timeout`` seconds without any worker connected.
        """
        got = False
        while True:
            try:
                if block and not got:
                    msg = self.messages.get(timeout=0.05)
                else:
                    msg = self.messages.get_nowait()
            except queue.Empty:
                if not block or got or self.now() > self.time_budget:
                    return
                if not self.workers and self.now() - self._last_activity > self.idle_timeout:
                    raise ProtocolError("no worker connected within the idle timeout") from None
                continue
            got = True
            self._last_activity = self.now()
            self._handle(msg)
            self._changed()

    def state_dict(self):
        return None


def sim_run(strategy, workers, time_model=None, t_max=math.inf, seed=None, problem=None):
    """Run ``strategy`` under the simulated-time controller and return its trace."""
    ctrl = SimController(strategy, problem or strategy.problem, workers=workers,
                         time_model=time_model, t_max=t_max, seed=seed)
    return ctrl.run().trace
