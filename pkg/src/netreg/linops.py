"""Finite-dimensional linear operators with adjoints, norms and SVD.

All operators act on the last axis of their input, so a 2-D array of shape
``(batch, in_dim)`` is mapped row by row to ``(batch, out_dim)``. Operators are
immutable after construction.
"""
from dataclasses import dataclass

import numpy as np

from netreg import kernels
from netreg.errors import (
    BudgetExceeded,
    ConvergenceError,
    DimensionError,
    NumericalError,
    check_dim,
)

DEFAULT_BUDGET = 2**20
DEFAULT_RANK_TOLERANCE = 1e-12


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class LinearOperator:
    """Base class. Subclasses implement ``_apply`` and ``_adjoint``."""

    in_dim: int
    out_dim: int

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        check_dim(x, self.in_dim, f"input to {type(self).__name__}")
        return self._apply(x)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        check_dim(y, self.out_dim, f"input to adjoint of {type(self).__name__}")
        return self._adjoint(y)

    def __call__(self, x):
        return self.apply(x)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return Composed(self, other)
        return NotImplemented

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def __repr__(self):
        return f"{type(self).__name__}({self.out_dim}x{self.in_dim})"


class DenseOperator(LinearOperator):
    """Explicit ``m x n`` matrix."""

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or 0 in m.shape:
            raise DimensionError(f"dense operator needs a non-empty 2-D matrix, got shape {m.shape}")
        self.matrix = _frozen(m)
        self.out_dim, self.in_dim = m.shape

    def _apply(self, x):
        return x @ self.matrix.T

    def _adjoint(self, y):
        return y @ self.matrix


class CircularConvolution(LinearOperator):
    """Periodic convolution ``(k * x)[i] = sum_j k[j] x[(i - j) mod n]``.

    The kernel may be shorter than ``n``; it is implicitly zero-padded.
    """

    def __init__(self, kernel, n):
        k = np.asarray(kernel, dtype=np.float64).ravel()
        if n < 1 or k.size < 1 or k.size > n:
            raise DimensionError(f"kernel length {k.size} must lie in [1, n={n}]")
        self.kernel = _frozen(k)
        self.in_dim = self.out_dim = int(n)

    def _apply(self, x):
        return kernels.circ_conv(self.kernel, x)

    def _adjoint(self, y):
        return kernels.circ_corr(self.kernel, y)

    def symbol(self):
        """Discrete Fourier symbol; its moduli are the singular values."""
        padded = np.zeros(self.in_dim)
        padded[: self.kernel.size] = self.kernel
        return np.fft.fft(padded)


class MaskedSampling(LinearOperator):
    """Coordinate selection ``x -> x[indices]``; the adjoint zero-fills."""

    def __init__(self, indices, n):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise DimensionError("sampling needs at least one index")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= n:
            raise DimensionError(f"indices must be strictly increasing within [0, {n})")
        idx.setflags(write=False)
        self.indices = idx
        self.in_dim = int(n)
        self.out_dim = int(idx.size)

    def _apply(self, x):
        return x[..., self.indices]

    def _adjoint(self, y):
        out = np.zeros(y.shape[:-1] + (self.in_dim,))
        out[..., self.indices] = y
        return out


class Composed(LinearOperator):
    """``outer o inner``."""

    def __init__(self, outer, inner):
        if inner.out_dim != outer.in_dim:
            raise DimensionError(
                f"cannot compose: inner maps to {inner.out_dim}, outer expects {outer.in_dim}"
            )
        self.outer = outer
        self.inner = inner
        self.in_dim = inner.in_dim
        self.out_dim = outer.out_dim

    def _apply(self, x):
        return self.outer.apply(self.inner.apply(x))

    def _adjoint(self, y):
        return self.inner.adjoint(self.outer.adjoint(y))


def identity(n):
    return DenseOperator(np.eye(n))


def apply(op, x):
    return op.apply(x)


def adjoint_apply(op, y):
    return op.adjoint(y)


def operator_norm(op, tol=1e-8, max_iter=5000, seed=0):
    """Largest singular value by power iteration on ``A* A``.

    The Rayleigh quotients of the power iterates increase monotonically; the
    iteration stops once the increment, extrapolated with the observed
    geometric rate, falls below ``tol`` relative to the estimate.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` is reached; carries the last iterate and residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_dim)
    v /= np.linalg.norm(v)
    nu_prev = 0.0
    inc_prev = None
    residual = np.inf
    for it in range(1, max_iter + 1):
        av = op.apply(v)
        w = op.adjoint(av)
        lam = float(v @ w)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        nu = np.sqrt(max(lam, 0.0))
        residual = float(np.linalg.norm(w - lam * v)) / max(lam, np.finfo(float).tiny)
        v = w / nrm
        inc = abs(nu - nu_prev)
        if it >= 3 and inc <= 8 * np.finfo(float).eps * nu:
            # increments at round-off level carry no rate information
            return float(np.linalg.norm(op.apply(v)))
        if inc_prev is not None and it >= 3:
            rate = min(inc / inc_prev, 1.0 - 1e-12) if inc_prev > 0 else 0.0
            remaining = inc * rate / (1.0 - rate)
            if inc <= tol * nu and remaining <= tol * nu:
                return float(np.linalg.norm(op.apply(v)))
        nu_prev, inc_prev = nu, inc
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        last_iterate=v,
        residual=residual,
        iterations=max_iter,
    )


def materialize(op, budget=DEFAULT_BUDGET):
    """Dense matrix whose column ``j`` is ``op.apply(e_j)``."""
    entries = op.in_dim * op.out_dim
    if entries > budget:
        raise BudgetExceeded(f"{op.out_dim}x{op.in_dim} = {entries} entries exceeds budget {budget}")
    if isinstance(op, DenseOperator):
        return np.array(op.matrix)
    return np.ascontiguousarray(op.apply(np.eye(op.in_dim)).T)


@dataclass(frozen=True)
class SvdFactorization:
    """Compact singular system ``A = U diag(s) V^T`` with ``s`` strictly positive, descending."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    out_dim: int
    in_dim: int

    @property
    def rank(self):
        return int(self.s.size)

    @property
    def s_max(self):
        return float(self.s[0]) if self.s.size else 0.0

    def matrix(self):
        return (self.U * self.s) @ self.V.T


def svd(op, rank_tolerance=DEFAULT_RANK_TOLERANCE, budget=DEFAULT_BUDGET):
    """Singular system of the materialized operator via one-sided Jacobi.

    Singular values below ``rank_tolerance * s_max`` are treated as zero and
    excluded.
    """
    a = materialize(op, budget)
    m, n = a.shape
    transposed = m < n
    work = a.T if transposed else a
    tol = max(1e-15, max(work.shape) * np.finfo(float).eps)
    w, rot, sweeps = kernels.jacobi_svd(work, tol=tol)
    if sweeps > 80 or not np.all(np.isfinite(w)):
        raise NumericalError("Jacobi SVD failed to converge")
    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    s_max = s[0] if s.size else 0.0
    keep = s > rank_tolerance * s_max if s_max > 0 else np.zeros(s.size, dtype=bool)
    order = order[keep]
    s = s[keep]
    left = w[:, order] / s
    right = rot[:, order]
    U, V = (right, left) if transposed else (left, right)
    return SvdFactorization(
        U=_frozen(U), s=_frozen(s), V=_frozen(V), out_dim=m, in_dim=n
    )


def adjoint_mismatch(op, n_pairs=100, seed=0, norm=None):
    """Largest ``|<Ax, y> - <x, A*y>| / (|x| |y| |A|)`` over seeded random pairs."""
    rng = np.random.default_rng(seed)
    if norm is None:
        norm = operator_norm(op, seed=seed)
    scale = norm if norm > 0 else 1.0
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.in_dim)
        y = rng.standard_normal(op.out_dim)
        lhs = op.apply(x) @ y
        rhs = x @ op.adjoint(y)
        rel = abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y) * scale)
        worst = max(worst, rel)
    return worst
