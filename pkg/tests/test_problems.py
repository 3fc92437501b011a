import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncsot.errors import DomainError
from asyncsot.problems import CATALOG, Problem, evaluate, get_problem, problem_catalog


def ackley_ref(x):
    # written out term by term, independent of the package version
    n = len(x)
    s1 = sum(v * v for v in x)
    s2 = sum(math.cos(2 * math.pi * v) for v in x)
    return -20 * math.exp(-0.2 * math.sqrt(s1 / n)) - math.exp(s2 / n) + 20 + math.e


def test_ackley_at_origin_is_zero():
    for d in (1, 2, 10, 30):
        assert abs(evaluate(get_problem("ackley", d), np.zeros(d))) < 1e-12


def test_sphere_zero():
    assert evaluate(get_problem("sphere", 3), np.zeros(3)) == 0.0


def test_rastrigin_ones_d2():
    assert evaluate(get_problem("rastrigin", 2), np.ones(2)) == pytest.approx(2.0, abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_ackley_matches_reference(xs):
    p = get_problem("ackley", len(xs))
    assert p.eval(np.array(xs)) == pytest.approx(ackley_ref(xs), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", sorted(CATALOG))
@pytest.mark.parametrize("dim", [1, 2, 10])
def test_known_optimum_consistency(name, dim):
    p = get_problem(name, dim)
    assert p.eval(p.minimizer) == pytest.approx(p.min_value, abs=1e-12)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_shifted_instance_keeps_optimum(name):
    p = get_problem(name, 5, instance=7)
    assert np.all(np.abs(p.minimizer) <= 4.0)
    assert p.eval(p.minimizer) == pytest.approx(0.0, abs=1e-12)
    q = get_problem(name, 5, instance=7)
    np.testing.assert_array_equal(p.minimizer, q.minimizer)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_optimum_is_lowest_among_random_points(name):
    p = get_problem(name, 4)
    x = np.random.default_rng(0).uniform(-5, 5, (200, 4))
    assert min(p.eval(v) for v in x) >= p.min_value


def test_catalog_contents():
    names = {p.name for p in problem_catalog(10)}
    assert {"sphere", "ackley", "rastrigin", "griewank", "levy", "schaffer"} <= names
    ack = get_problem("ackley", 10)
    assert np.all(ack.lb == -5) and np.all(ack.ub == 5)


def test_unknown_problem():
    with pytest.raises(KeyError):
        get_problem("bbob-f15", 10)


def test_out_of_bounds_is_domain_error():
    p = get_problem("sphere", 2)
    with pytest.raises(DomainError):
        p.eval(np.array([5.5, 0.0]))
    with pytest.raises(DomainError):
        p.eval(np.array([0.0, 0.0, 0.0]))
    with pytest.raises(DomainError):
        p.eval(np.array([np.nan, 0.0]))


def test_integer_coordinates_checked():
    p = get_problem("sphere", 3, num_int=1)
    assert p.int_var == (0,)
    assert p.eval(np.array([2.0, 0.5, 0.5])) == pytest.approx(4.5)
    with pytest.raises(DomainError):
        p.eval(np.array([0.5, 0.0, 0.0]))


def test_invalid_problem_construction():
    with pytest.raises(ValueError):
        Problem("bad", 2, [0, 0], [0, 1], lambda x: 0.0)
    with pytest.raises(ValueError):
        Problem("bad", 1, [0.5], [2.0], lambda x: 0.0, int_var=(0,))


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_evaluation_is_deterministic(xs):
    p = get_problem("griewank", 3)
    x = np.array(xs)
    assert p.eval(x) == p.eval(x.copy())


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_unit_roundtrip(xs):
    p = get_problem("levy", len(xs))
    x = np.array(xs)
    np.testing.assert_allclose(p.from_unit(p.to_unit(x)), x, atol=1e-14)
