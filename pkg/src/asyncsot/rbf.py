"""Radial basis function interpolation with a polynomial tail.

The interpolant is ``s(x) = sum_i lam_i phi(|x - x_i|) + sum_j c_j pi_j(x)``
with coefficients from the saddle-point system::

    [ 0  P^T ] [c  ]   [0  ]
    [ P  Phi ] [lam] = [f_X]

The tail block is ordered first so that new points extend the matrix at the
bottom-right. The first factorization is a pivoted LU of the whole system;
each later batch of ``k`` points adds two triangular solves and a ``k x k``
Cholesky factorization of the trailing Schur complement, which costs
``O(k n^2)`` instead of refactoring in ``O(n^3)``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .design import tail_rank_ok
from .errors import DuplicatePointError, NotReadyError

__all__ = [
    "LinearKernel",
    "CubicKernel",
    "TPSKernel",
    "ConstantTail",
    "LinearTail",
    "KERNELS",
    "RbfSurrogate",
    "UnitRescaled",
    "wrap_rescale",
    "median_cap",
]

DUPLICATE_TOL = 1e-12


class LinearKernel:
    """``phi(r) = r``, order 1.

    ``-r`` is the conditionally positive definite one, so the trailing Schur
    complement is negative definite and is factored with a sign flip.
    """

    name = "linear"
    order = 1
    sign = -1.0

    def __call__(self, r):
        return np.asarray(r, dtype=float)


class CubicKernel:
    """``phi(r) = r^3``, order 2."""

    name = "cubic"
    order = 2
    sign = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return r * r * r


class TPSKernel:
    """Thin-plate spline ``phi(r) = r^2 log r`` with ``phi(0) = 0``, order 2."""

    name = "tps"
    order = 2
    sign = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = r[pos] ** 2 * np.log(r[pos])
        return out


KERNELS = {"linear": LinearKernel, "cubic": CubicKernel, "tps": TPSKernel}


class ConstantTail:
    degree = 0

    def dim_tail(self, d: int) -> int:
        return 1

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.ones((X.shape[0], 1))


class LinearTail:
    degree = 1

    def dim_tail(self, d: int) -> int:
        return d + 1

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.column_stack([np.ones(X.shape[0]), X])


def median_cap(values) -> np.ndarray:
    """Replace every value above the median by the median."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one value")
    return np.minimum(v, np.median(v))


class RbfSurrogate:
    """Incrementally factored RBF interpolant.

    :param dim: Number of dimensions
    :param kernel: Kernel instance, default :class:`CubicKernel`
    :param tail: Tail instance, default :class:`LinearTail`
    :param eta: Diagonal regularization added to ``Phi``
    :param value_transform: Optional map applied to the stored values before
        solving (e.g. :func:`median_cap`); the factorization does not depend
        on the values, so this only changes the right-hand side.
    """

    def __init__(self, dim, kernel=None, tail=None, eta=1e-8, value_transform=None):
        self.dim = int(dim)
        self.kernel = kernel if kernel is not None else CubicKernel()
        self.tail = tail if tail is not None else LinearTail()
        if self.tail.degree < self.kernel.order - 1:
            raise ValueError(
                f"{self.kernel.name} kernel needs a tail of degree >= {self.kernel.order - 1}"
            )
        if eta < 0:
            raise ValueError("eta must be non-negative")
        self._eta = float(eta)
        self.value_transform = value_transform
        self.reset()

    def reset(self):
        self._X = np.empty((0, self.dim))
        self._fX = np.empty(0)
        self._L = None
        self._U = None
        self._perm = None
        self._coef = None
        self.batches = []
        self.num_factorizations = 0
        self.num_updates = 0

    # --------------------------------------------------------------- state

    @property
    def eta(self) -> float:
        return self._eta

    def regularize(self, eta: float):
        """Set the regularization; only allowed before the first factorization."""
        if self._L is not None:
            raise RuntimeError("eta cannot change after the system has been factored")
        if eta < 0:
            raise ValueError("eta must be non-negative")
        self._eta = float(eta)
        return self

    @property
    def num_pts(self) -> int:
        return self._X.shape[0]

    @property
    def X(self) -> np.ndarray:
        return self._X.copy()

    @property
    def fX(self) -> np.ndarray:
        return self._fX.copy()

    @property
    def m(self) -> int:
        return self.tail.dim_tail(self.dim)

    @property
    def ready(self) -> bool:
        return self._L is not None

    # --------------------------------------------------------------- updates

    def add_points(self, xx, fx):
        """Add ``k`` points and their values.

        :param xx: ``(k, dim)`` array
        :param fx: ``(k,)`` array of finite values
        :raises DuplicatePointError: if a point repeats an existing one
        """
        xx = np.atleast_2d(np.asarray(xx, dtype=float))
        fx = np.atleast_1d(np.asarray(fx, dtype=float)).ravel()
        if xx.shape[1] != self.dim or xx.shape[0] != fx.shape[0]:
            raise ValueError("shape mismatch between points and values")
        if xx.shape[0] == 0:
            return self
        if not np.all(np.isfinite(fx)) or not np.all(np.isfinite(xx)):
            raise ValueError("non-finite point or value")
        self._check_duplicates(xx)

        n_old = self.num_pts
        self._X = np.vstack([self._X, xx])
        self._fX = np.concatenate([self._fX, fx])
        self.batches.append(xx.shape[0])
        self._coef = None

        if self._L is None:
            if self.num_pts >= self.m and tail_rank_ok(self._X, self.m):
                self._factor_full()
        else:
            try:
                self._factor_update(n_old)
            except np.linalg.LinAlgError:
                # Schur complement lost definiteness numerically; refactor from scratch
                self._factor_full()
        return self

    def _check_duplicates(self, xx):
        if xx.shape[0] > 1:
            d = cdist(xx, xx)
            np.fill_diagonal(d, np.inf)
            if d.min() <= DUPLICATE_TOL:
                raise DuplicatePointError("batch contains coinciding points")
        if self.num_pts:
            if cdist(xx, self._X).min() <= DUPLICATE_TOL:
                raise DuplicatePointError("point coincides with a stored point")

    def _phi(self, A, B):
        return self.kernel(cdist(A, B))

    def _system(self):
        m, n = self.m, self.num_pts
        P = self.tail(self._X)
        A = np.zeros((m + n, m + n))
        A[:m, m:] = P.T
        A[m:, :m] = P
        A[m:, m:] = self._phi(self._X, self._X) + self.kernel.sign * self._eta * np.eye(n)
        return A

    def _factor_full(self):
        p, L, U = sla.lu(self._system())
        self._perm = np.argmax(p, axis=0)
        self._L = L
        self._U = U
        self.num_factorizations += 1

    def _factor_update(self, n_old):
        m = self.m
        xnew = self._X[n_old:]
        k = xnew.shape[0]
        B = np.vstack([self.tail(xnew).T, self._phi(self._X[:n_old], xnew)])
        C = self._phi(xnew, xnew) + self.kernel.sign * self._eta * np.eye(k)

        U12 = sla.solve_triangular(self._L, B[self._perm], lower=True, check_finite=False)
        L21 = sla.solve_triangular(self._U, B, trans="T", lower=False, check_finite=False).T
        S = C - L21 @ U12
        L22 = np.linalg.cholesky(self.kernel.sign * 0.5 * (S + S.T))

        N = m + n_old
        L = np.zeros((N + k, N + k))
        L[:N, :N] = self._L
        L[N:, :N] = L21
        L[N:, N:] = L22
        U = np.zeros((N + k, N + k))
        U[:N, :N] = self._U
        U[:N, N:] = U12
        U[N:, N:] = self.kernel.sign * L22.T
        self._L, self._U = L, U
        self._perm = np.concatenate([self._perm, np.arange(N, N + k)])
        self.num_updates += 1

    # ------------------------------------------------------------ evaluation

    def _values(self):
        fx = self._fX
        if self.value_transform is not None:
            fx = np.asarray(self.value_transform(fx), dtype=float)
        return fx

    def _solve(self):
        if self._L is None:
            raise NotReadyError(
                f"need at least {self.m} points with a full-rank tail matrix before predicting"
            )
        rhs = np.concatenate([np.zeros(self.m), self._values()])
        y = sla.solve_triangular(self._L, rhs[self._perm], lower=True, check_finite=False)
        return sla.solve_triangular(self._U, y, lower=False, check_finite=False)

    @property
    def coefficients(self):
        """``(lam, c)``: kernel weights and tail coefficients."""
        if self._coef is None:
            self._coef = self._solve()
        return self._coef[self.m:].copy(), self._coef[: self.m].copy()

    def predict(self, xx):
        """Evaluate the interpolant at one point ``(dim,)`` or many ``(n, dim)``."""
        xx = np.asarray(xx, dtype=float)
        single = xx.ndim == 1
        xx = np.atleast_2d(xx)
        lam, c = self.coefficients
        out = self._phi(xx, self._X) @ lam + self.tail(xx) @ c
        return float(out[0]) if single else out

    def __call__(self, xx):
        return self.predict(xx)

    # ------------------------------------------------------------ snapshots

    def state_dict(self) -> dict:
        return {
            "X": self._X.tolist(),
            "fX": self._fX.tolist(),
            "batches": list(self.batches),
            "eta": self._eta,
        }

    def load_state_dict(self, state: dict):
        """Rebuild by replaying the recorded insertion batches (bit-identical)."""
        self.reset()
        self._eta = float(state["eta"])
        X = np.asarray(state["X"], dtype=float).reshape(-1, self.dim)
        fX = np.asarray(state["fX"], dtype=float)
        start = 0
        for k in state["batches"]:
            self.add_points(X[start:start + k], fX[start:start + k])
            start += k
        return self


class UnitRescaled:
    """View of a surrogate through the affine map from ``[lb, ub]`` to ``[0, 1]^d``.

    Points passed in are in original coordinates; the wrapped surrogate only
    ever sees unit-cube coordinates.
    """

    def __init__(self, surrogate, lb, ub):
        self.surrogate = surrogate
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lb) / (self.ub - self.lb)

    def from_unit(self, u):
        return self.lb + np.asarray(u, dtype=float) * (self.ub - self.lb)

    def add_points(self, xx, fx):
        self.surrogate.add_points(self.to_unit(xx), fx)
        return self

    def predict(self, xx):
        return self.surrogate.predict(self.to_unit(xx))

    def __call__(self, xx):
        return self.predict(xx)

    def reset(self):
        self.surrogate.reset()

    @property
    def X(self):
        return self.from_unit(self.surrogate.X)

    @property
    def ready(self):
        return self.surrogate.ready


def wrap_rescale(surrogate, problem) -> UnitRescaled:
    """Wrap ``surrogate`` so it is queried in ``problem``'s original coordinates."""
    return UnitRescaled(surrogate, problem.lb, problem.ub)
