"""Box-constrained optimization problems and analytic test functions.

A :class:`Problem` bundles the dimension, the bounds, the integer
coordinates and the objective. The catalog ships standard multimodal
functions (plus the sphere as a unimodal control), all posed on
``[-5, 5]^d``. Passing ``instance`` to :func:`get_problem` translates the
global minimizer by a seeded random offset, so experiments can run on
instances whose optimum is not at a symmetric location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "Problem",
    "evaluate",
    "get_problem",
    "problem_catalog",
    "CATALOG",
]


@dataclass(frozen=True, eq=False)
class Problem:
    """Minimize ``objective(x)`` over a box, some coordinates integer.

    :param name: Identifier used by the CLI and in traces
    :param dim: Number of variables
    :param lb: Lower bounds, shape ``(dim,)``
    :param ub: Upper bounds, shape ``(dim,)``
    :param objective: Callable taking a 1-d array and returning a float
    :param int_var: Indices of integer-valued coordinates
    :param min_value: Known global minimum value, if any
    :param minimizer: Known global minimizer, if any
    """

    name: str
    dim: int
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable[[np.ndarray], float] = field(repr=False)
    int_var: tuple = ()
    min_value: float | None = None
    minimizer: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=float).reshape(-1).copy()
        ub = np.asarray(self.ub, dtype=float).reshape(-1).copy()
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if lb.shape != (self.dim,) or ub.shape != (self.dim,):
            raise ValueError("bounds must have shape (dim,)")
        if not np.all(lb < ub):
            raise ValueError("lower bounds must be strictly below upper bounds")
        int_var = tuple(sorted(int(i) for i in self.int_var))
        if len(set(int_var)) != len(int_var):
            raise ValueError("duplicate integer indices")
        if any(i < 0 or i >= self.dim for i in int_var):
            raise ValueError("integer indices out of range")
        for i in int_var:
            if lb[i] != round(lb[i]) or ub[i] != round(ub[i]):
                raise ValueError("integer coordinates need integer bounds")
        lb.flags.writeable = False
        ub.flags.writeable = False
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "int_var", int_var)
        if self.minimizer is not None:
            xopt = np.asarray(self.minimizer, dtype=float).copy()
            xopt.flags.writeable = False
            object.__setattr__(self, "minimizer", xopt)

    @property
    def cont_var(self) -> tuple:
        return tuple(i for i in range(self.dim) if i not in self.int_var)

    def check(self, x) -> np.ndarray:
        """Return ``x`` as a float array, raising :class:`DomainError` if infeasible."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DomainError(f"expected a point of shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("point has non-finite coordinates")
        if np.any(x < self.lb) or np.any(x > self.ub):
            raise DomainError("point lies outside the bounds")
        if self.int_var:
            xi = x[list(self.int_var)]
            if np.any(xi != np.round(xi)):
                raise DomainError("integer coordinates must be integral")
        return x

    def eval(self, x) -> float:
        return float(self.objective(self.check(x)))

    def __call__(self, x) -> float:
        return self.eval(x)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lb) / (self.ub - self.lb)

    def from_unit(self, u) -> np.ndarray:
        return self.lb + np.asarray(u, dtype=float) * (self.ub - self.lb)


def evaluate(problem: Problem, x) -> float:
    """Evaluate ``problem`` at ``x``; out-of-domain points raise, never clamp."""
    return problem.eval(x)


# ------------------------------------------------------------------ functions


def sphere(x):
    return float(np.dot(x, x))


def ackley(x):
    d = x.size
    a = -20.0 * math.exp(-0.2 * math.sqrt(float(np.dot(x, x)) / d))
    b = -math.exp(float(np.sum(np.cos(2.0 * math.pi * x))) / d)
    return a + b + 20.0 + math.e


def rastrigin(x):
    return 10.0 * x.size + float(np.sum(x * x - 10.0 * np.cos(2.0 * math.pi * x)))


def griewank(x):
    i = np.arange(1, x.size + 1)
    return 1.0 + float(np.dot(x, x)) / 4000.0 - float(np.prod(np.cos(x / np.sqrt(i))))


def levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = math.sin(math.pi * w[0]) ** 2
    mid = np.sum((w[:-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(math.pi * w[:-1] + 1.0) ** 2))
    tail = (w[-1] - 1.0) ** 2 * (1.0 + math.sin(2.0 * math.pi * w[-1]) ** 2)
    return head + float(mid) + tail


def schaffer(x):
    # Schaffer F7 over consecutive coordinate pairs; d=1 uses |x_0|.
    if x.size == 1:
        s = np.abs(x)
    else:
        s = np.sqrt(x[:-1] ** 2 + x[1:] ** 2)
    terms = np.sqrt(s) * (1.0 + np.sin(50.0 * s**0.2) ** 2)
    return float(np.mean(terms)) ** 2


@dataclass(frozen=True)
class _Entry:
    func: Callable
    minimizer: Callable[[int], np.ndarray]
    description: str


def _zeros(d):
    return np.zeros(d)


CATALOG = {
    "sphere": _Entry(sphere, _zeros, "sum of squares (unimodal control)"),
    "ackley": _Entry(ackley, _zeros, "Ackley"),
    "rastrigin": _Entry(rastrigin, _zeros, "Rastrigin"),
    "griewank": _Entry(griewank, _zeros, "Griewank"),
    "levy": _Entry(levy, np.ones, "Levy"),
    "schaffer": _Entry(schaffer, _zeros, "Schaffer F7"),
}

BOUND = 5.0
SHIFT_RANGE = 4.0


class _Shifted:
    """``f(x - shift)`` composed so the minimizer lands at ``target``."""

    def __init__(self, func, base_xopt, target):
        self.func = func
        self.offset = np.asarray(base_xopt, float) - np.asarray(target, float)

    def __call__(self, x):
        return self.func(x + self.offset)


def get_problem(name: str, dim: int, instance: int | None = None,
                num_int: int = 0) -> Problem:
    """Look up a catalog problem by name.

    :param name: One of :data:`CATALOG` (case-insensitive)
    :param dim: Dimension
    :param instance: Seed for a random translation of the minimizer inside
        ``[-4, 4]^dim``; ``None`` keeps the textbook location
    :param num_int: Make the first ``num_int`` coordinates integer-valued
    :raises KeyError: Unknown name
    """
    key = name.lower()
    if key not in CATALOG:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}")
    if not 0 <= num_int <= dim:
        raise ValueError("num_int must lie in [0, dim]")
    entry = CATALOG[key]
    base_xopt = entry.minimizer(dim).astype(float)
    func = entry.func
    xopt = base_xopt
    label = key
    if instance is not None:
        rng = np.random.default_rng([int(instance), dim, sorted(CATALOG).index(key)])
        xopt = rng.uniform(-SHIFT_RANGE, SHIFT_RANGE, dim)
        xopt[:num_int] = np.round(xopt[:num_int])
        func = _Shifted(entry.func, base_xopt, xopt)
        label = f"{key}-i{instance}"
    return Problem(
        name=label,
        dim=dim,
        lb=np.full(dim, -BOUND),
        ub=np.full(dim, BOUND),
        objective=func,
        int_var=tuple(range(num_int)),
        min_value=0.0,
        minimizer=xopt,
    )


def problem_catalog(dim: int = 10, names: Sequence[str] | None = None) -> list:
    """Instantiate every catalog problem (or ``names``) at dimension ``dim``."""
    return [get_problem(n, dim) for n in (names or CATALOG)]
