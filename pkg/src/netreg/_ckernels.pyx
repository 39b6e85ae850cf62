# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``netreg._pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign, pow

cnp.import_array()


def jacobi_svd(a, double tol=1e-15, int max_sweeps=80):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] w = np.array(
        a, dtype=np.float64, order="F", copy=True)
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t n = w.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] v = np.asfortranarray(np.eye(n))
    cdef double[::1, :] W = w
    cdef double[::1, :] V = v
    cdef Py_ssize_t i, j, r
    cdef int sweep
    cdef bint rotated
    cdef double alpha, beta, gamma, zeta, t, c, s, wi, wj
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += W[r, i] * W[r, i]
                    beta += W[r, j] * W[r, j]
                    gamma += W[r, i] * W[r, j]
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    wi = W[r, i]
                    wj = W[r, j]
                    W[r, i] = c * wi - s * wj
                    W[r, j] = s * wi + c * wj
                for r in range(n):
                    wi = V[r, i]
                    wj = V[r, j]
                    V[r, i] = c * wi - s * wj
                    V[r, j] = s * wi + c * wj
        if not rotated:
            return w, v, sweep
    return w, v, max_sweeps + 1


def _conv(kernel, x, int sign):
    cdef const double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    flat = xa.reshape(-1, xa.shape[xa.ndim - 1])
    out = np.zeros_like(flat)
    cdef const double[:, ::1] X = flat
    cdef double[:, ::1] Y = out
    cdef Py_ssize_t nb = X.shape[0], n = X.shape[1], nk = k.shape[0]
    cdef Py_ssize_t b, i, j, idx
    cdef double kj
    with nogil:
        for b in range(nb):
            for j in range(nk):
                kj = k[j]
                if kj == 0.0:
                    continue
                for i in range(n):
                    idx = (i - sign * j) % n
                    if idx < 0:
                        idx = idx + n
                    Y[b, i] += kj * X[b, idx]
    return out.reshape(xa.shape)


def circ_conv(kernel, x):
    return _conv(kernel, x, 1)


def circ_corr(kernel, y):
    return _conv(kernel, y, -1)


cdef double _prox_scalar(double v, double lam, double p, double tol,
                         int max_iter) noexcept nogil:
    cdef double a = fabs(v)
    cdef double lo = 0.0, hi, u, g, dg, step
    cdef int it
    if a == 0.0 or lam == 0.0:
        return v
    hi = a
    u = a
    for it in range(max_iter):
        g = u - a + lam * p * pow(u, p - 1.0)
        if g > 0.0:
            hi = u
        else:
            lo = u
        dg = 1.0 + lam * p * (p - 1.0) * pow(u, p - 2.0)
        step = u - g / dg
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if fabs(step - u) <= tol * a:
            u = step
            break
        u = step
    return copysign(u, v)


def prox_power(v, thresh, double p, double tol=1e-15, int max_iter=100):
    va = np.asarray(v, dtype=np.float64)
    th = np.ascontiguousarray(np.broadcast_to(np.asarray(thresh, dtype=np.float64), va.shape))
    out = np.empty(va.shape, dtype=np.float64)
    cdef const double[::1] V = np.ascontiguousarray(va).ravel()
    cdef const double[::1] T = th.ravel()
    cdef double[::1] O = out.ravel()
    cdef Py_ssize_t i
    with nogil:
        for i in range(V.shape[0]):
            O[i] = _prox_scalar(V[i], T[i], p, tol, max_iter)
    return out
