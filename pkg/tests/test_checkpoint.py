import json

import numpy as np
import pytest

from asyncsot.bench import RunConfig, build_trial, run_trial
from asyncsot.checkpoint import Checkpointer, read_snapshot, resume, snapshot, write_snapshot
from asyncsot.controller import ThreadController, ThreadWorker
from asyncsot.errors import CheckpointError
from asyncsot.problems import get_problem
from asyncsot.strategy import SurrogateStrategy


class Crash(Exception):
    pass


def crash_after(n):
    def listener(ctrl):
        if len(ctrl.trace) >= n:
            raise Crash
    return listener


CFG = RunConfig(problem="ackley", dim=4, mode="async", workers=3, alpha=2.84,
                max_evals=80, t_max=1e9, seed=7)


def test_snapshot_roundtrip_identity(tmp_path):
    _, ctrl = build_trial(CFG, 0)
    for _ in range(10):
        ctrl.step()
    path = tmp_path / "snap.json"
    write_snapshot(snapshot(ctrl), path)
    _, other = build_trial(CFG, 0)
    resume(path, other)
    assert snapshot(other) == json.loads(json.dumps(snapshot(ctrl)))


@pytest.mark.parametrize("mode", ["sync", "async"])
def test_resume_after_crash_matches(tmp_path, mode):
    cfg = RunConfig(**{**CFG.__dict__, "mode": mode})
    full = run_trial(cfg, 0)
    path = tmp_path / "run.json"
    _, ctrl = build_trial(cfg, 0)
    Checkpointer(ctrl, path)
    ctrl.add_listener(crash_after(30))
    with pytest.raises(Crash):
        ctrl.run()
    _, fresh = build_trial(cfg, 0)
    resumed = resume(path, fresh).run()
    assert resumed.trace.to_dict()["rows"] == full.to_dict()["rows"]
    assert resumed.f_best == full.rows[-1].best


def test_version_mismatch(tmp_path):
    path = tmp_path / "snap.json"
    _, ctrl = build_trial(CFG, 0)
    write_snapshot(snapshot(ctrl), path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    path.write_text(json.dumps(doc))
    _, other = build_trial(CFG, 0)
    before = snapshot(other)
    with pytest.raises(CheckpointError, match="format_version"):
        resume(path, other)
    assert snapshot(other) == before


def test_corruption_detected(tmp_path):
    path = tmp_path / "snap.json"
    _, ctrl = build_trial(CFG, 0)
    ctrl.step()
    write_snapshot(snapshot(ctrl), path)
    doc = json.loads(path.read_text())
    doc["payload"]["strategy"]["num_completed"] += 1
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="integrity"):
        read_snapshot(path)
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        read_snapshot(path)


def test_wrong_controller_type(tmp_path):
    path = tmp_path / "snap.json"
    _, ctrl = build_trial(CFG, 0)
    write_snapshot(snapshot(ctrl), path)
    prob = get_problem("ackley", 4)
    with pytest.raises(CheckpointError):
        resume(path, ThreadController(SurrogateStrategy(prob, 80, workers=3, seed=0), prob))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    _, ctrl = build_trial(CFG, 0)
    ck = Checkpointer(ctrl, tmp_path / "snap.json", every=5)
    ctrl.run()
    assert ck.writes > 0
    assert [p.name for p in tmp_path.iterdir()] == ["snap.json"]


def test_thread_controller_requeues_pending(tmp_path):
    prob = get_problem("sphere", 2)
    strat = SurrogateStrategy(prob, 20, workers=2, seed=0)
    ctrl = ThreadController(strat, prob)
    path = tmp_path / "snap.json"
    Checkpointer(ctrl, path)
    ctrl.add_listener(crash_after(8))
    for _ in range(2):
        ctrl.launch_worker(ThreadWorker(prob))
    with pytest.raises(Crash):
        ctrl.run()
    payload = read_snapshot(path)
    assert payload["controller"] is None
    strat2 = SurrogateStrategy(prob, 20, workers=2, seed=1)
    ctrl2 = resume(path, ThreadController(strat2, prob))
    assert not strat2.pending
    assert strat2.num_completed == payload["strategy"]["num_completed"]
    for _ in range(2):
        ctrl2.launch_worker(ThreadWorker(prob))
    ctrl2.run()
    assert strat2.num_completed == 20
