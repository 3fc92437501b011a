"""Gaussian process regression with a squared-exponential kernel.

Hyper-parameters ``(length_scale, signal_var, noise_var)`` are fitted by
maximizing the log marginal likelihood over a box in log space with
multi-start L-BFGS-B, using the analytic gradient. The mean is a constant
equal to the data mean.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

__all__ = ["GaussianProcess", "se_kernel", "log_marginal_likelihood"]

NOISE_FLOOR = 1e-8
LOG2PI = math.log(2.0 * math.pi)


def se_kernel(A, B, length_scale, signal_var):
    """``signal_var * exp(-0.5 |a - b|^2 / length_scale^2)``."""
    d2 = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return signal_var * np.exp(-0.5 * d2 / length_scale**2)


def log_marginal_likelihood(log_theta, X, y, mean, grad=False):
    """Log marginal likelihood and, optionally, its gradient in ``log theta``.

    :param log_theta: ``log`` of ``(length_scale, signal_var, noise_var)``
    :param X: ``(n, d)`` inputs
    :param y: ``(n,)`` observations
    :param mean: Constant prior mean
    :raises numpy.linalg.LinAlgError: if the covariance is not positive definite
    """
    ell, sf2, sn2 = np.exp(np.asarray(log_theta, dtype=float))
    X = np.atleast_2d(X)
    n = X.shape[0]
    d2 = cdist(X, X, "sqeuclidean")
    E = np.exp(-0.5 * d2 / ell**2)
    K = sf2 * E + sn2 * np.eye(n)
    L = np.linalg.cholesky(K)
    r = np.asarray(y, dtype=float) - mean
    alpha = sla.cho_solve((L, True), r)
    value = -0.5 * (r @ alpha + 2.0 * np.sum(np.log(np.diag(L))) + n * LOG2PI)
    if not grad:
        return value
    W = np.outer(alpha, alpha) - sla.cho_solve((L, True), np.eye(n))
    dK = (sf2 * E * d2 / ell**2, sf2 * E, sn2 * np.eye(n))
    g = np.array([0.5 * np.sum(W * D) for D in dK])
    return value, g


class GaussianProcess:
    """Squared-exponential GP surrogate.

    :param length_scale_bounds: Box for the length scale (unit-cube inputs)
    :param num_restarts: Multi-start count for the likelihood maximization
    """

    def __init__(self, length_scale_bounds=(1e-2, 2.0), num_restarts=10):
        self.length_scale_bounds = length_scale_bounds
        self.num_restarts = num_restarts
        self.X = None
        self.y = None
        self.theta = None
        self.mean = None
        self.num_factorizations = 0

    def reset(self):
        self.X = self.y = self.theta = self.mean = None

    def _bounds(self, y):
        var = float(np.var(y))
        if not var > 0:
            var = 1.0
        lo_n = NOISE_FLOOR
        hi_n = max(1e-2 * var, lo_n)
        return np.log([
            self.length_scale_bounds,
            (1e-3 * var, 10.0 * var),
            (lo_n, hi_n),
        ])

    def fit(self, X, y, rng=None):
        """Fit hyper-parameters and cache the Cholesky factor.

        :param X: ``(n, d)`` inputs, ``n >= 2``
        :param y: ``(n,)`` finite observations
        :param rng: Generator for the multi-start points
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] < 2 or X.shape[0] != y.size:
            raise ValueError("need at least two observations")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        rng = np.random.default_rng() if rng is None else rng
        mean = float(np.mean(y))
        bounds = self._bounds(y)

        def objective(z):
            try:
                v, g = log_marginal_likelihood(z, X, y, mean, grad=True)
            except np.linalg.LinAlgError:
                return 1e25, np.zeros(3)
            return -v, -g

        starts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(self.num_restarts, 3))
        best_z, best_v = None, np.inf
        for z0 in starts:
            res = minimize(objective, z0, jac=True, method="L-BFGS-B", bounds=bounds)
            if np.isfinite(res.fun) and res.fun < best_v:
                best_z, best_v = res.x, res.fun
        if best_z is None or best_v >= 1e25:
            best_z = bounds[:, 1].copy()  # largest noise is the best conditioned
        self._set(X, y, mean, np.exp(best_z))
        return self

    def _set(self, X, y, mean, theta):
        ell, sf2, sn2 = theta
        n = X.shape[0]
        while True:
            K = se_kernel(X, X, ell, sf2) + sn2 * np.eye(n)
            try:
                L = np.linalg.cholesky(K)
                break
            except np.linalg.LinAlgError:
                sn2 = max(10.0 * sn2, NOISE_FLOOR)
        self.num_factorizations += 1
        self.X, self.y, self.mean = X, y, mean
        self.theta = np.array([ell, sf2, sn2])
        self._L = L
        self._alpha = sla.cho_solve((L, True), y - mean)
        return self

    def set_hyperparameters(self, X, y, theta, mean=None):
        """Condition on data at fixed ``theta`` without optimizing."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        return self._set(X, y, float(np.mean(y)) if mean is None else mean, theta)

    def predict_mv(self, xx):
        """Posterior mean and variance (clamped at zero) at ``(n, d)`` points."""
        xx = np.atleast_2d(np.asarray(xx, dtype=float))
        ell, sf2, _ = self.theta
        ks = se_kernel(xx, self.X, ell, sf2)
        mu = self.mean + ks @ self._alpha
        v = sla.solve_triangular(self._L, ks.T, lower=True, check_finite=False)
        var = np.maximum(sf2 - np.sum(v * v, axis=0), 0.0)
        return mu, var

    def predict(self, xx):
        return self.predict_mv(xx)[0]

    def __call__(self, xx):
        return self.predict(xx)

    def log_likelihood(self):
        return log_marginal_likelihood(np.log(self.theta), self.X, self.y, self.mean)
