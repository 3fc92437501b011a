"""Auxiliary problem: candidate generation, merit selection, BO acquisitions.

All points handled here live in the unit hypercube. Integer coordinates are
rounded in the problem's original units and mapped back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .design import round_half_away
from .errors import ConfigError

__all__ = [
    "WEIGHT_PATTERN",
    "WeightCycle",
    "round_unit",
    "perturbation_scale",
    "candidates_srbf",
    "candidates_dycors",
    "candidates_uniform",
    "dycors_probability",
    "merit_scores",
    "select_candidates",
    "probability_of_improvement",
    "expected_improvement",
    "lower_confidence_bound",
    "select_acquisition",
]

WEIGHT_PATTERN = (0.3, 0.5, 0.8, 0.95)


@dataclass
class WeightCycle:
    """Cycles through the merit weights; the position survives restarts."""

    pattern: tuple = WEIGHT_PATTERN
    index: int = 0

    def next(self) -> float:
        w = self.pattern[self.index % len(self.pattern)]
        self.index += 1
        return w

    def take(self, k: int) -> list:
        return [self.next() for _ in range(k)]


def _ranges(problem):
    return problem.ub - problem.lb


def round_unit(cand, problem):
    """Round integer coordinates of unit-cube points in original units."""
    if not problem.int_var:
        return cand
    idx = list(problem.int_var)
    rng_ = _ranges(problem)[idx]
    lo = problem.lb[idx]
    orig = np.clip(round_half_away(lo + cand[:, idx] * rng_), lo, problem.ub[idx])
    cand[:, idx] = (orig - lo) / rng_
    return cand


def perturbation_scale(sigma, problem) -> np.ndarray:
    """Per-coordinate perturbation std in unit coordinates.

    Integer coordinates use at least one unit of their original range so
    they actually move after rounding.
    """
    scale = np.full(problem.dim, float(sigma))
    if problem.int_var:
        idx = list(problem.int_var)
        r = _ranges(problem)[idx]
        scale[idx] = np.maximum(sigma * r, 1.0) / r
    return scale


def _reflect(cand):
    cand = np.where(cand < 0.0, -cand, cand)
    cand = np.where(cand > 1.0, 2.0 - cand, cand)
    return np.clip(cand, 0.0, 1.0)


def candidates_srbf(x_best, sigma, problem, rng, num):
    """Gaussian perturbations of every coordinate of ``x_best``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x_best = np.asarray(x_best, dtype=float)
    scale = perturbation_scale(sigma, problem)
    cand = x_best + scale * rng.standard_normal((num, problem.dim))
    return round_unit(_reflect(cand), problem)


def dycors_probability(n, n0, nmax, d) -> float:
    """Probability of perturbing each coordinate after ``n`` evaluations.

    ``min(20/d, 1) * (1 - log(n - n0) / log(nmax - n0))``, taken as the
    leading factor when ``n <= n0 + 1`` (the log term is undefined or zero
    there) and floored at ``1/d`` so at least one coordinate stays likely to
    move late in the run.
    """
    if nmax <= n0:
        raise ConfigError("evaluation budget must exceed the design size")
    lead = min(20.0 / d, 1.0)
    if n - n0 <= 1:
        return lead
    frac = math.log(n - n0) / math.log(nmax - n0)
    return max(lead * (1.0 - min(frac, 1.0)), 1.0 / d)


def candidates_dycors(x_best, sigma, problem, rng, num, n, n0, nmax):
    """Perturb each coordinate of ``x_best`` with probability ``dycors_probability``.

    At least one coordinate of every candidate is perturbed.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = problem.dim
    prob = dycors_probability(n, n0, nmax, d)
    x_best = np.asarray(x_best, dtype=float)
    mask = rng.random((num, d)) < prob
    empty = ~mask.any(axis=1)
    mask[empty, rng.integers(0, d, size=int(empty.sum()))] = True
    scale = perturbation_scale(sigma, problem)
    step = scale * rng.standard_normal((num, d))
    cand = x_best + np.where(mask, step, 0.0)
    return round_unit(_reflect(cand), problem)


def candidates_uniform(problem, rng, num):
    """Uniform points; integer coordinates uniform over their integer values."""
    cand = rng.random((num, problem.dim))
    if problem.int_var:
        idx = list(problem.int_var)
        lo, hi = problem.lb[idx], problem.ub[idx]
        vals = rng.integers(lo.astype(np.int64), hi.astype(np.int64) + 1, size=(num, len(idx)))
        cand[:, idx] = (vals - lo) / (hi - lo)
    return cand


# ------------------------------------------------------------ merit selection


def _unit_rescale(v):
    vmin, vmax = np.min(v), np.max(v)
    if vmax > vmin:
        return (v - vmin) / (vmax - vmin)
    return np.ones_like(v)


def merit_scores(fhat, dists, weight):
    """``w V^S + (1 - w) V^D`` for candidate predictions and distances."""
    vs = _unit_rescale(np.asarray(fhat, dtype=float))
    dmax, dmin = np.max(dists), np.min(dists)
    if dmax > dmin:
        vd = (dmax - dists) / (dmax - dmin)
    else:
        vd = np.ones_like(dists)
    return weight * vs + (1.0 - weight) * vd


def select_candidates(cand, fhat, evaluated, weights, dtol=0.0):
    """Pick ``len(weights)`` candidates by the weighted-distance merit.

    Distances are to ``evaluated`` (points completed or in flight); each
    pick is appended to that set before the next one. Candidates closer
    than ``dtol`` are skipped; if all are, the farthest candidate is taken.
    Ties go to the lowest index.

    :param cand: ``(N, d)`` candidate points
    :param fhat: ``(N,)`` surrogate predictions at ``cand``
    :param evaluated: ``(M, d)`` points to keep away from, ``M >= 1``
    :param weights: One merit weight per pick
    :returns: List of selected candidate indices
    """
    cand = np.atleast_2d(cand)
    fhat = np.asarray(fhat, dtype=float)
    dists = np.min(cdist(cand, np.atleast_2d(evaluated)), axis=1)
    picks = []
    for w in weights:
        merit = merit_scores(fhat, dists, w)
        merit[dists < dtol] = np.inf
        if picks:
            merit[picks] = np.inf
        if np.all(np.isinf(merit)):
            far = dists.copy()
            far[picks] = -np.inf
            j = int(np.argmax(far))
        else:
            j = int(np.argmin(merit))
        picks.append(j)
        dists = np.minimum(dists, cdist(cand, cand[j:j + 1]).ravel())
    return picks


# -------------------------------------------------------------- acquisitions


def probability_of_improvement(mu, sigma, f_plus, xi=0.0):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = f_plus - mu - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gap / np.where(sigma > 0, sigma, 1.0), 0.0)
    return np.where(sigma > 0, norm.cdf(z), (gap > 0).astype(float))


def expected_improvement(mu, sigma, f_plus, xi=0.0):
    """``(f+ - mu - xi) Phi(Z) + sigma phi(Z)``; zero where ``sigma == 0``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = f_plus - mu - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore"):
        z = gap / safe
        ei = gap * norm.cdf(z) + safe * norm.pdf(z)
    return np.where(sigma > 0, np.maximum(ei, 0.0), 0.0)


def lower_confidence_bound(mu, sigma, kappa=2.0):
    return np.asarray(mu, dtype=float) - kappa * np.asarray(sigma, dtype=float)


def select_acquisition(cand, scores, evaluated, num, dtol=0.0, maximize=True):
    """Best ``num`` candidates by ``scores``, each at least ``dtol`` from the rest."""
    cand = np.atleast_2d(cand)
    s = np.asarray(scores, dtype=float).copy()
    if not maximize:
        s = -s
    dists = np.min(cdist(cand, np.atleast_2d(evaluated)), axis=1)
    picks = []
    for _ in range(num):
        masked = np.where(dists < dtol, -np.inf, s)
        masked[picks] = -np.inf
        if np.all(np.isneginf(masked)):
            far = dists.copy()
            far[picks] = -np.inf
            j = int(np.argmax(far))
        else:
            j = int(np.argmax(masked))
        picks.append(j)
        dists = np.minimum(dists, cdist(cand, cand[j:j + 1]).ravel())
    return picks
