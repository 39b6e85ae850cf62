"""Pure-Python reference versions of the hot numerical kernels.

These are used when the compiled ``_ckernels`` extension is unavailable, and as
the comparison baseline in ``benchmarks/bench_kernels.py``. Signatures and
results match the compiled versions to round-off.
"""
import math

import numpy as np


def jacobi_svd(a, tol=1e-15, max_sweeps=80):
    """One-sided (Hestenes) Jacobi SVD of a tall-or-square matrix.

    Parameters
    ----------
    a : ndarray, shape (m, n) with m >= n
    tol : float
        Rotation threshold on the normalized column inner product.
    max_sweeps : int

    Returns
    -------
    w : ndarray, shape (m, n)
        Mutually orthogonal columns ``a @ v``; their norms are the singular values.
    v : ndarray, shape (n, n)
        Orthogonal right rotation.
    sweeps : int
        Number of sweeps used; ``max_sweeps + 1`` signals non-convergence.
    """
    w = np.array(a, dtype=np.float64, order="F", copy=True)
    m, n = w.shape
    v = np.eye(n, order="F")
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                wi = w[:, i]
                wj = w[:, j]
                alpha = wi @ wi
                beta = wj @ wj
                gamma = wi @ wj
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * wi - s * wj
                w[:, j] = s * wi + c * wj
                w[:, i] = new_i
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            return w, v, sweep
    return w, v, max_sweeps + 1


def circ_conv(kernel, x):
    """Circular convolution ``y[i] = sum_j kernel[j] * x[(i - j) mod n]``."""
    k = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    y = np.zeros_like(x)
    for j in range(k.shape[0]):
        if k[j] != 0.0:
            y += k[j] * np.roll(x, j, axis=-1)
    return y


def circ_corr(kernel, y):
    """Adjoint of :func:`circ_conv`: ``x[i] = sum_j kernel[j] * y[(i + j) mod n]``."""
    k = np.asarray(kernel, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = np.zeros_like(y)
    for j in range(k.shape[0]):
        if k[j] != 0.0:
            x += k[j] * np.roll(y, -j, axis=-1)
    return x


def prox_power(v, thresh, p, tol=1e-15, max_iter=100):
    """Elementwise minimizer of ``0.5 (u - v)^2 + thresh * |u|^p`` for 1 < p < 2.

    Safeguarded Newton on ``u - |v| + thresh p u^(p-1) = 0`` over ``[0, |v|]``.
    ``thresh`` is broadcast against ``v``.
    """
    v = np.asarray(v, dtype=np.float64)
    th = np.broadcast_to(np.asarray(thresh, dtype=np.float64), v.shape)
    out = np.empty_like(v)
    flat_v = v.ravel()
    flat_t = th.ravel()
    flat_o = out.ravel()
    for idx in range(flat_v.shape[0]):
        flat_o[idx] = _prox_scalar(flat_v[idx], flat_t[idx], p, tol, max_iter)
    return out


def _prox_scalar(v, lam, p, tol, max_iter):
    a = abs(v)
    if a == 0.0 or lam == 0.0:
        return v
    lo, hi = 0.0, a
    u = a
    for _ in range(max_iter):
        g = u - a + lam * p * u ** (p - 1.0)
        if g > 0.0:
            hi = u
        else:
            lo = u
        dg = 1.0 + lam * p * (p - 1.0) * u ** (p - 2.0)
        step = u - g / dg
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if abs(step - u) <= tol * a:
            u = step
            break
        u = step
    return math.copysign(u, v)
