import sys

import numpy as np
import pytest

from asyncsot.controller import (
    ConstantTime,
    EvalRecord,
    ProcessWorker,
    Proposal,
    SerialController,
    SimController,
    ThreadController,
    ThreadWorker,
    last_float,
    sim_run,
)
from asyncsot.errors import ProtocolError
from asyncsot.problems import get_problem
from asyncsot.strategy import SurrogateStrategy


class Sequence:
    """Durations taken from a fixed list, then repeated."""

    def __init__(self, values):
        self.values = list(values)
        self.i = 0

    def sample(self, rng):
        v = self.values[self.i % len(self.values)]
        self.i += 1
        return v


class Scripted:
    """Strategy stub proposing a fixed list of actions and logging callbacks."""

    def __init__(self, problem, points, kill_after=None):
        self.problem = problem
        self.todo = [np.asarray(p, float) for p in points]
        self.log = []
        self.outstanding = 0
        self.kill_after = kill_after
        self.records = []

    def propose_action(self):
        if self.kill_after is not None and len(self.records) == self.kill_after:
            self.kill_after = None
            prop = Proposal("kill", self.records[0].id)
            prop.add_callback(lambda p: self.log.append(("kill", p.accepted)))
            return prop
        if self.todo:
            prop = Proposal("eval", self.todo.pop(0))
            prop.add_callback(self._processed)
            return prop
        if self.outstanding:
            return None
        prop = Proposal("terminate")
        prop.add_callback(lambda p: self.log.append(("terminate", p.accepted)))
        return prop

    def _processed(self, prop):
        self.log.append(("eval", prop.accepted))
        if prop.accepted:
            self.outstanding += 1
            self.records.append(prop.record)
            prop.record.add_callback(self._update)

    def _update(self, rec):
        if rec.is_done:
            self.outstanding -= 1
            self.log.append((rec.status, rec.id))


def test_proposal_callbacks_exactly_once():
    calls = []
    p = Proposal("eval", np.zeros(2))
    p.add_callback(calls.append)
    p.add_callback(calls.append)
    p.accept()
    assert calls == [p, p]
    with pytest.raises(ProtocolError):
        p.reject()
    with pytest.raises(ValueError):
        Proposal("jump")


def test_record_transitions():
    r = EvalRecord(0, [0.0])
    with pytest.raises(ProtocolError):
        r.complete(1.0, 1.0)
    r.running(0.0, 3)
    r.update(5.0)
    assert r.partial_value == 5.0
    r.complete(1.0, 2.0)
    assert r.value == 1.0 and r.t_start <= r.t_end
    with pytest.raises(ProtocolError):
        r.kill(3.0)
    assert EvalRecord.from_dict(r.to_dict()).to_dict() == r.to_dict()


def test_reject_out_of_bounds():
    prob = get_problem("sphere", 2)
    strat = Scripted(prob, [[9.0, 0.0], [1.0, 1.0]])
    res = SerialController(strat, prob).run()
    assert strat.log[0] == ("eval", False)
    assert sum(1 for e in strat.log if e == ("eval", False)) == 1
    assert res.f_best == 2.0 and len(res.trace) == 1


def test_event_schedule_two_workers():
    prob = get_problem("sphere", 2)
    strat = Scripted(prob, [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    ctrl = SimController(strat, prob, workers=2, time_model=Sequence([1.0, 2.0, 1.0]))
    ctrl.run()
    r0, r1, r2 = (ctrl.records[i] for i in range(3))
    assert (r0.worker, r0.t_end) == (0, 1.0)
    assert (r1.worker, r1.t_end) == (1, 2.0)
    assert r2.t_start == 1.0 and r2.worker == 0


def test_same_time_completions_in_dispatch_order():
    prob = get_problem("sphere", 1)
    strat = Scripted(prob, [[0.0], [1.0], [2.0]])
    SimController(strat, prob, workers=3, time_model=ConstantTime(1.0)).run()
    done = [e for e in strat.log if e[0] == "completed"]
    assert done == [("completed", 0), ("completed", 1), ("completed", 2)]


def test_kill_honored_and_ignored():
    prob = get_problem("sphere", 1)
    strat = Scripted(prob, [[0.0], [1.0]], kill_after=2)
    ctrl = SimController(strat, prob, workers=3, time_model=Sequence([5.0, 1.0]))
    ctrl.run()
    assert ctrl.records[0].status == "killed" and ctrl.records[0].value is None
    assert ("kill", True) in strat.log

    strat = Scripted(prob, [[0.0], [1.0]], kill_after=2)
    ctrl = SimController(strat, prob, workers=3, time_model=Sequence([5.0, 1.0]), honor_kills=False)
    ctrl.run()
    assert ctrl.records[0].status == "completed"


def test_kill_edge_cases():
    prob = get_problem("sphere", 1)
    strat = Scripted(prob, [[0.0]])
    ctrl = SimController(strat, prob, workers=1)
    ctrl.run()
    assert ctrl.kill(0) is False
    with pytest.raises(ProtocolError):
        ctrl.kill(42)


def test_worker_pool_changes():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 30, workers=2, seed=0)
    ctrl = SimController(strat, prob, workers=3, time_model=ConstantTime(1.0), seed=0)
    ctrl.remove_worker(2)
    assert ctrl.num_workers == 2
    ctrl.step()
    wid = ctrl.add_worker()
    ctrl.step()
    ctrl.run()
    used = {r.worker for r in ctrl.records.values()}
    assert 2 not in used and wid in used
    assert all(r.is_done for r in ctrl.records.values())


def test_remove_busy_worker_fails_record_and_retries():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 30, workers=2, seed=0)
    ctrl = SimController(strat, prob, workers=2, time_model=ConstantTime(1.0), seed=0)
    ctrl._dispatch()
    rid = ctrl.busy[1]
    point = ctrl.records[rid].point.copy()
    ctrl.remove_worker(1)
    assert ctrl.records[rid].status == "failed"
    with pytest.raises(ProtocolError):
        ctrl.remove_worker(0)
    ctrl.run()
    retried = [r for r in ctrl.records.values() if r.id != rid and np.array_equal(r.point, point)]
    assert retried and retried[0].status == "completed"


def test_worker_crash_is_retried():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 20, workers=2, seed=0)
    ctrl = SimController(strat, prob, workers=2, seed=0)
    ctrl._dispatch()
    rid = ctrl.busy[0]
    ctrl.crash_worker(0)
    assert ctrl.records[rid].status == "failed" and ctrl.num_workers == 2
    res = ctrl.run()
    assert len(res.trace) == 20


def test_time_budget_kills_running():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 100, workers=2, seed=0)
    ctrl = SimController(strat, prob, workers=2, time_model=ConstantTime(3.0), t_max=10.0, seed=0)
    res = ctrl.run()
    assert ctrl.timed_out and len(res.trace) == 6
    assert all(r.t_end <= 10.0 for r in res.trace.rows)
    assert sum(r.status == "killed" for r in ctrl.records.values()) == 2


def test_failure_rate_and_nonfinite_values():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 30, workers=2, seed=0)
    ctrl = SimController(strat, prob, workers=2, seed=0, failure_rate=0.2)
    res = ctrl.run()
    assert len(res.trace) == 30
    assert any(r.status == "failed" for r in ctrl.records.values())


def test_sim_run_deterministic():
    prob = get_problem("ackley", 3)
    traces = []
    for _ in range(2):
        strat = SurrogateStrategy(prob, 40, workers=3, seed=4)
        from asyncsot.bench import ParetoTimeModel
        traces.append(sim_run(strat, 3, ParetoTimeModel(2.84), seed=9).to_dict())
    assert traces[0] == traces[1]


def test_strategy_error_surfaces():
    class Broken:
        def propose_action(self):
            raise RuntimeError("boom")

    prob = get_problem("sphere", 1)
    with pytest.raises(RuntimeError, match="boom"):
        SimController(Broken(), prob).run()
    ctrl = ThreadController(Broken(), prob)
    w = ThreadWorker(prob)
    ctrl.launch_worker(w)
    with pytest.raises(RuntimeError, match="boom"):
        ctrl.run()


def test_thread_controller_with_thread_workers():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 30, workers=3, seed=0)
    ctrl = ThreadController(strat, prob)
    for _ in range(3):
        ctrl.launch_worker(ThreadWorker(prob))
    res = ctrl.run()
    assert len(res.trace) == 30
    assert all(r.is_done for r in ctrl.records.values())
    assert {r.worker for r in res.trace.rows} <= {0, 1, 2}


def test_last_float():
    assert last_float("loading 3 files\nvalue: -1.5e-3\n") == -1.5e-3
    with pytest.raises(ValueError):
        last_float("nothing here")


def test_process_worker():
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 12, workers=2, seed=0)
    ctrl = ThreadController(strat, prob)
    cmd = f"{sys.executable} -c \"import sys; print('f =', sum(float(v)**2 for v in sys.argv[1:]))\" {{x}}"
    for _ in range(2):
        ctrl.launch_worker(ProcessWorker(cmd))
    res = ctrl.run()
    assert len(res.trace) == 12
    for r in res.trace.rows:
        assert r.value == pytest.approx(sum(v * v for v in r.point))


def test_process_worker_kill():
    import threading
    import time

    w = ProcessWorker(f"{sys.executable} -c \"import time; time.sleep(30); print(1)\" {{x}}")
    got = []
    done = threading.Event()
    w.start(lambda msg: (got.append(msg), done.set()))
    w.eval(0, [0.0])
    time.sleep(0.3)
    t0 = time.time()
    w.kill(0)
    assert done.wait(10)
    assert got[0][0] == "killed" and time.time() - t0 < 10
    w.terminate()
