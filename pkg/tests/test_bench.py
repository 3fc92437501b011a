import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from asyncsot.bench import (ParetoTimeModel, RunConfig, SpeedupReport, compute_speedup, emit_report,
                            emit_traces, load_report, load_traces, run_experiment, run_trial)
from asyncsot.errors import ConfigError
from asyncsot.trace import ProgressTrace


def make_trace(points, trial=0):
    """Trace from ``(t_end, value)`` pairs."""
    tr = ProgressTrace(trial=trial)
    for t, v in points:
        tr.append(0.0, t, 0, v, [0.0])
    return tr


# ------------------------------------------------------------ Pareto


def test_pareto_inverse_cdf_known_value():
    assert ParetoTimeModel(2.0).inverse_cdf(0.25) == pytest.approx(2.0, rel=1e-12)


@given(st.floats(1.01, 200), st.floats(0.1, 10), st.floats(1e-9, 1.0))
def test_pareto_inverse_matches_scipy(alpha, b, u):
    # our u is the survival probability: x = b u^(-1/alpha)
    ours = ParetoTimeModel(alpha, b).inverse_cdf(u)
    assert ours == pytest.approx(stats.pareto(alpha, scale=b).isf(u), rel=1e-9)


@pytest.mark.parametrize("alpha", [2.84, 12.0, 102.0])
def test_pareto_moments_match_scipy(alpha):
    m = ParetoTimeModel(alpha)
    ref = stats.pareto(alpha)
    assert m.mean == pytest.approx(ref.mean(), rel=1e-12)
    assert m.variance == pytest.approx(ref.var(), rel=1e-12)


def test_pareto_samples_at_least_scale():
    x = ParetoTimeModel(3.0, b=2.0).sample(np.random.default_rng(0), 10_000)
    assert x.min() >= 2.0
    assert np.mean(x) == pytest.approx(3.0, rel=0.05)


@pytest.mark.parametrize("alpha", [1.0, 0.5, -2.0])
def test_pareto_rejects_infinite_mean(alpha):
    with pytest.raises(ConfigError):
        ParetoTimeModel(alpha)


# ------------------------------------------------------------ runs

SMALL = RunConfig(problem="ackley", dim=3, workers=1, mode="serial", max_evals=30, t_max=math.inf, seed=3)


def test_serial_sequence_independent_of_time_model():
    a = run_trial(RunConfig(**{**SMALL.__dict__, "alpha": 2.84}))
    b = run_trial(RunConfig(**{**SMALL.__dict__, "alpha": None}))
    assert [r.point for r in a.rows] == [r.point for r in b.rows]
    assert [r.value for r in a.rows] == [r.value for r in b.rows]
    assert b.t_end[-1] == pytest.approx(30.0)


def test_config_roundtrip_and_echo():
    cfg = RunConfig(**{**SMALL.__dict__, "trials": 2})
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    traces = run_experiment(cfg)
    assert [t.trial for t in traces] == [0, 1]
    assert RunConfig.from_dict(traces[0].config) == cfg


def test_parallel_jobs_same_results():
    cfg = RunConfig(**{**SMALL.__dict__, "trials": 2, "mode": "async", "workers": 2})
    a = run_experiment(cfg, jobs=1)
    b = run_experiment(cfg, jobs=2)
    assert [t.to_dict() for t in a] == [t.to_dict() for t in b]


def test_trials_differ():
    a, b = run_experiment(RunConfig(**{**SMALL.__dict__, "trials": 2}))
    assert a.values.tolist() != b.values.tolist()


# ------------------------------------------------------------ speedup


def test_speedup_exact_ratio():
    serial = [make_trace([(50.0, 5.0), (100.0, 1.0)])]
    par = [make_trace([(12.5, 5.0), (25.0, 1.0)])]
    rep = compute_speedup({1: serial, 4: par}, num_targets=3)
    assert rep.intersection == [1.0, 5.0]
    assert rep.errors[0] == pytest.approx(5.0) and rep.errors[-1] == pytest.approx(1.0)
    assert rep.times[1][-1] == 100.0 and rep.times[4][-1] == 25.0
    assert rep.speedup[4] == pytest.approx([4.0, 4.0, 4.0])
    assert rep.speedup[1] == pytest.approx([1.0, 1.0, 1.0])


def test_speedup_means_over_trials():
    serial = [make_trace([(1.0, 10.0), (t, 1.0)]) for t in (80.0, 120.0)]
    par = [make_trace([(1.0, 10.0), (t, 1.0)]) for t in (20.0, 30.0)]
    rep = compute_speedup({1: serial, 4: par}, num_targets=1)
    # one target: top of the intersection, hit at t=1 by everyone
    assert rep.speedup[4] == pytest.approx([1.0])
    rep = compute_speedup({1: serial, 4: par}, targets=[1.0])
    assert rep.times[1] == [100.0] and rep.times[4] == [25.0]
    assert rep.speedup[4] == pytest.approx([4.0])
    se1 = np.std([80, 120], ddof=1) / math.sqrt(2)
    se4 = np.std([20, 30], ddof=1) / math.sqrt(2)
    assert rep.speedup_stderr[4][0] == pytest.approx(4 * math.hypot(se1 / 100, se4 / 25))


def test_speedup_censoring_counted():
    serial = [make_trace([(10.0, 3.0), (20.0, 1.0)]), make_trace([(10.0, 3.0)])]
    par = [make_trace([(5.0, 1.0)]), make_trace([(5.0, 2.0)])]
    rep = compute_speedup({1: serial, 2: par}, targets=[1.0])
    assert rep.reached[1] == [1] and rep.excluded[1] == [1]
    assert rep.reached[2] == [1] and rep.excluded[2] == [1]
    assert rep.times[1] == [20.0] and rep.speedup[2] == pytest.approx([4.0])


def test_speedup_errors():
    tr = [make_trace([(1.0, 1.0)])]
    with pytest.raises(ConfigError):
        compute_speedup({1: tr})
    with pytest.raises(ConfigError):
        compute_speedup({2: tr, 4: tr})
    with pytest.raises(ConfigError):
        compute_speedup({1: tr, 2: [ProgressTrace()]})


def test_speedup_empty_intersection():
    serial = [make_trace([(1.0, 10.0), (2.0, 8.0)])]
    par = [make_trace([(1.0, 5.0), (2.0, 1.0)])]
    rep = compute_speedup({1: serial, 4: par})
    assert rep.empty and rep.intersection is None and rep.note


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 100), min_size=1, max_size=8), min_size=2, max_size=4))
def test_speedup_targets_inside_every_range(value_lists):
    traces = [make_trace([(i + 1.0, v) for i, v in enumerate(vs)], trial=k)
              for k, vs in enumerate(value_lists)]
    half = len(traces) // 2
    rep = compute_speedup({1: traces[:half] or traces[:1], 2: traces[half:]}, num_targets=4)
    for p in rep.reached:
        assert sum(rep.excluded[p]) == 0


def test_report_roundtrip(tmp_path):
    serial = [make_trace([(50.0, 5.0), (100.0, 1.0)])]
    par = [make_trace([(12.5, 5.0), (25.0, 1.0)])]
    rep = compute_speedup({1: serial, 4: par}, num_targets=2)
    emit_report(rep, tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert isinstance(back, SpeedupReport)
    assert json.dumps(back.to_dict()) == json.dumps(rep.to_dict())


# ------------------------------------------------------------ output


def test_csv_empty_trace_header_only(tmp_path):
    path = tmp_path / "t.csv"
    emit_traces([ProgressTrace()], path)
    lines = path.read_text().splitlines()
    assert lines == ["trial,eval_index,t_start,t_end,worker,f,best_f"]


def test_csv_two_evals(tmp_path):
    path = tmp_path / "t.csv"
    tr = ProgressTrace()
    tr.append(0.0, 1.5, 0, 3.0, [0.1, 0.2])
    tr.append(0.0, 2.0, 1, 0.1 + 0.2, [0.3, 0.4])
    emit_traces([tr], path, dump_points=True)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 3
    assert rows[0][-2:] == ["x0", "x1"]
    assert float(rows[2][5]) == 0.1 + 0.2  # repr round trip
    back = load_traces(path)
    assert back[0].rows == tr.rows


def test_json_roundtrip(tmp_path):
    path = tmp_path / "t.json"
    cfg = RunConfig(**{**SMALL.__dict__, "max_evals": 12})
    traces = [run_trial(cfg)]
    emit_traces(traces, path, fmt="json")
    back = load_traces(path)
    assert json.dumps([t.to_dict() for t in back]) == json.dumps([t.to_dict() for t in traces])


def test_unknown_format(tmp_path):
    with pytest.raises(ConfigError):
        emit_traces([], tmp_path / "x", fmt="xml")


@pytest.mark.parametrize("f_opt", [0.0, 0.1, -3.7])
def test_degenerate_intersection_reached_by_all(f_opt):
    traces = [make_trace([(1.0, 8.0)], trial=k) for k in range(2)]
    rep = compute_speedup({1: traces[:1], 2: traces[1:]}, num_targets=4, f_opt=f_opt)
    assert rep.excluded == {1: [0] * 4, 2: [0] * 4}
    assert rep.speedup[2] == [1.0] * 4
