"""Right inverses and orthogonal projections.

The Moore-Penrose inverse and range projection come from a compact singular
system. The kernel projection ``P_ker(A)`` is available either explicitly from
the singular system or iteratively (CG on the normal equations, or Landweber),
both started from the vector being projected.
"""
from dataclasses import dataclass

import numpy as np

from netreg import linops
from netreg.errors import ConvergenceError, check_dim


def pseudoinverse_apply(f, y):
    """``A^+ y = sum_i s_i^{-1} <u_i, y> v_i``."""
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, f.out_dim, "data")
    return ((y @ f.U) / f.s) @ f.V.T


def range_project(f, y):
    """Orthogonal projection onto ``ran(A)``: ``U U^T y``."""
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, f.out_dim, "data")
    return (y @ f.U) @ f.U.T


def kernel_basis(f):
    """Orthonormal basis of ``ker(A)`` as the columns of an ``n x (n - r)`` array."""
    n = f.in_dim
    if f.rank == n:
        return np.zeros((n, 0))
    comp = np.eye(n) - f.V @ f.V.T
    g = linops.svd(linops.DenseOperator(comp), rank_tolerance=1e-8)
    return np.array(g.U[:, : n - f.rank])


@dataclass(frozen=True)
class SvdKernelProjection:
    """``P_ker z = z - V V^T z``."""

    factorization: linops.SvdFactorization

    @property
    def in_dim(self):
        return self.factorization.in_dim

    def apply(self, z):
        z = np.asarray(z, dtype=np.float64)
        check_dim(z, self.in_dim, "vector to project")
        V = self.factorization.V
        return z - (z @ V) @ V.T


@dataclass(frozen=True)
class IterativeKernelProjection:
    """Iterative ``P_ker z``: CG on ``A*A x = 0`` or Landweber, started at ``z``.

    Iterates stay in ``z + ker(A)^perp`` and stop once
    ``|A x_k| <= tol |A| |z|``. ``max_iter`` defaults to ``10 * in_dim`` for CG
    and ``100000`` for Landweber (whose contraction factor is
    ``1 - 0.9 (s_min / s_max)^2``).
    """

    op: linops.LinearOperator
    tol: float = 1e-10
    max_iter: int | None = None
    method: str = "cg"
    norm: float | None = None

    def __post_init__(self):
        if self.method not in ("cg", "landweber"):
            raise ValueError(f"unknown projection method {self.method!r}")
        if self.norm is None:
            object.__setattr__(self, "norm", linops.operator_norm(self.op, tol=1e-10))

    @property
    def in_dim(self):
        return self.op.in_dim

    def apply(self, z):
        z = np.asarray(z, dtype=np.float64)
        check_dim(z, self.in_dim, "vector to project")
        if z.ndim > 1:
            return np.stack([self.apply(row) for row in z.reshape(-1, z.shape[-1])]).reshape(z.shape)
        if self.method == "cg":
            return self._cg(z)
        return self._landweber(z)

    def _target(self, z):
        return self.tol * self.norm * float(np.linalg.norm(z))

    def _cg(self, z):
        # CGLS for min |A x|^2 from x0 = z
        max_iter = self.max_iter or 10 * self.in_dim
        A = self.op
        x = z.copy()
        r = -A.apply(x)
        target = self._target(z)
        if np.linalg.norm(r) <= target:
            return x
        s = A.adjoint(r)
        p = s.copy()
        gamma = s @ s
        for it in range(max_iter):
            q = A.apply(p)
            qq = q @ q
            if qq == 0.0:
                break
            step = gamma / qq
            x += step * p
            r -= step * q
            if np.linalg.norm(r) <= target:
                return x
            s = A.adjoint(r)
            gamma_new = s @ s
            if gamma_new == 0.0:
                break
            p = s + (gamma_new / gamma) * p
            gamma = gamma_new
        res = float(np.linalg.norm(A.apply(x)))
        if res <= target:
            return x
        raise ConvergenceError(
            "CG kernel projection did not converge", last_iterate=x, residual=res, iterations=max_iter
        )

    def _landweber(self, z):
        max_iter = self.max_iter or 100_000
        A = self.op
        tau = 0.9 / self.norm**2
        x = z.copy()
        target = self._target(z)
        ax = A.apply(x)
        for it in range(max_iter):
            if np.linalg.norm(ax) <= target:
                return x
            x -= tau * A.adjoint(ax)
            ax = A.apply(x)
        res = float(np.linalg.norm(ax))
        if res <= target:
            return x
        raise ConvergenceError(
            "Landweber kernel projection did not converge", last_iterate=x, residual=res, iterations=max_iter
        )


def kernel_projector(op, factorization=None, method="cg", tol=1e-10, max_iter=None):
    """Explicit projection when a singular system is at hand, iterative otherwise."""
    if factorization is not None:
        return SvdKernelProjection(factorization)
    return IterativeKernelProjection(op, tol=tol, max_iter=max_iter, method=method)


def kernel_project(p, z):
    return p.apply(z)
