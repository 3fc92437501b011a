"""Initial experimental designs in the unit hypercube.

Three generators are provided: Latin hypercube (LHD), symmetric Latin
hypercube (SLHD) and the 2-factorial corner design. :func:`realize` maps a
unit design onto a problem's box, rounds integer coordinates, and draws a
fresh design whenever rounding produced coinciding points or the matrix
``[1 | X]`` lost rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .errors import ConfigError, DegenerateDesignError

__all__ = [
    "Design",
    "KINDS",
    "generate",
    "latin_hypercube",
    "symmetric_latin_hypercube",
    "two_factorial",
    "numerical_rank",
    "tail_rank_ok",
    "round_half_away",
    "realize",
]

KINDS = ("slhd", "lhd", "factorial2")
MAX_FACTORIAL_DIM = 20
RANK_RTOL = 1e-10


@dataclass
class Design:
    points: np.ndarray
    kind: str

    @property
    def num_pts(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Each column is an independent permutation of the midpoints ``(i + 0.5)/n``."""
    levels = (np.arange(n) + 0.5) / n
    return np.column_stack([rng.permutation(levels) for _ in range(d)]) if d else np.empty((n, 0))


def symmetric_latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube whose row ``i`` and row ``n-1-i`` sum to the ones vector.

    For odd ``n`` the middle row is the centre point.
    """
    half = n // 2
    out = np.empty((n, d))
    for j in range(d):
        # integer levels 1..n, pair (a, n+1-a); choose one member per pair for the top half
        low = np.arange(1, half + 1)
        flip = rng.random(half) < 0.5
        top = np.where(flip, n + 1 - low, low)
        top = top[rng.permutation(half)]
        col = np.empty(n)
        col[:half] = top
        col[n - half:] = (n + 1 - top)[::-1]
        if n % 2:
            col[half] = (n + 1) / 2
        out[:, j] = (col - 0.5) / n
    return out


def two_factorial(d: int) -> np.ndarray:
    """All ``2**d`` corners of the unit cube."""
    if d > MAX_FACTORIAL_DIM:
        raise ConfigError(f"2-factorial design refused for d={d} > {MAX_FACTORIAL_DIM}")
    grid = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
    return grid.astype(float)


def generate(kind: str, n: int | None, d: int, rng: np.random.Generator) -> Design:
    """Generate a design of the requested kind.

    :param kind: ``"slhd"``, ``"lhd"`` or ``"factorial2"``
    :param n: Number of points (ignored for ``factorial2``, which has ``2**d``)
    :param d: Dimension
    :param rng: Random generator
    """
    kind = kind.lower()
    if d < 1:
        raise ConfigError("dimension must be positive")
    if kind == "factorial2":
        return Design(two_factorial(d), kind)
    if n is None or n < 1:
        raise ConfigError("design needs at least one point")
    if kind == "lhd":
        return Design(latin_hypercube(n, d, rng), kind)
    if kind == "slhd":
        return Design(symmetric_latin_hypercube(n, d, rng), kind)
    raise ConfigError(f"unknown design kind {kind!r}")


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank from a column-pivoted QR, relative to the largest column norm."""
    if mat.size == 0:
        return 0
    r = qr(mat, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    return int(np.sum(diag > rtol * diag[0]))


def tail_rank_ok(X: np.ndarray, m: int | None = None) -> bool:
    """True when ``[1 | X]`` (or its first ``m`` columns) has full column rank."""
    X = np.atleast_2d(X)
    P = np.column_stack([np.ones(X.shape[0]), X])
    if m is not None:
        P = P[:, :m]
    return P.shape[0] >= P.shape[1] and numerical_rank(P) == P.shape[1]


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _scale_and_round(unit, problem):
    pts = problem.lb + unit * (problem.ub - problem.lb)
    if problem.int_var:
        idx = list(problem.int_var)
        pts[:, idx] = np.clip(round_half_away(pts[:, idx]), problem.lb[idx], problem.ub[idx])
    return pts


def _acceptable(pts, problem) -> bool:
    n = pts.shape[0]
    if n > 1 and np.unique(pts, axis=0).shape[0] < n:
        return False
    unit = problem.to_unit(pts)
    P = np.column_stack([np.ones(n), unit])
    need = min(n, problem.dim + 1)
    return numerical_rank(P) >= need


def realize(design: Design, problem, rng: np.random.Generator,
            max_retries: int = 100) -> np.ndarray:
    """Map a unit design to ``problem``'s box, regenerating degenerate designs.

    A design is rejected if two points coincide after rounding integer
    coordinates, or if ``[1 | X]`` is rank deficient (full column rank when
    ``n >= d + 1``, full row rank otherwise).

    :returns: ``(n, d)`` array of feasible points in original coordinates
    :raises DegenerateDesignError: after ``max_retries`` regenerations
    """
    if design.dim != problem.dim:
        raise ConfigError("design and problem dimensions differ")
    n = design.num_pts
    unit = design.points
    for _ in range(max_retries + 1):
        pts = _scale_and_round(np.array(unit, dtype=float), problem)
        if _acceptable(pts, problem):
            return pts
        unit = generate(design.kind, n, design.dim, rng).points
    raise DegenerateDesignError(
        f"no acceptable {design.kind} design with {n} points after {max_retries} retries"
    )
