"""Regularizing filters and a-priori parameter choices.

A filter ``g_alpha`` acts on the spectrum ``lambda = s^2`` of ``A* A`` and
defines the linear reconstruction ``B_alpha = g_alpha(A* A) A*``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from netreg.errors import check_dim

FILTER_KINDS = ("tsvd", "tikhonov", "landweber")


@dataclass(frozen=True)
class FilterSpec:
    """Filter family. ``step`` is the Landweber step size ``tau``.

    The bound ``|lambda g_alpha(lambda)| <= 1`` holds for Landweber only when
    ``tau * lambda <= 1`` on the spectrum of interest.
    """

    kind: str
    step: float = 1.0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {FILTER_KINDS}")
        if self.step <= 0:
            raise ValueError("Landweber step must be positive")

    @property
    def bound_constant(self):
        return 1.0


def landweber_iterations(alpha):
    """Iteration count ``k = ceil(1 / alpha)`` identified with the parameter alpha."""
    # the offset absorbs round-off in 1/alpha for alpha = 1/k
    return max(1, math.ceil(1.0 / alpha - 1e-9))


def filter_values(spec, alpha, lam):
    """Vectorized ``g_alpha(lambda)`` for ``lambda >= 0``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    if spec.kind == "tikhonov":
        return 1.0 / (lam + alpha)
    if spec.kind == "tsvd":
        out = np.zeros_like(lam)
        keep = (lam >= alpha) & (lam > 0)
        out[keep] = 1.0 / lam[keep]
        return out
    k = landweber_iterations(alpha)
    tau = spec.step
    t = tau * lam
    out = np.empty_like(lam)
    zero = lam == 0
    out[zero] = k * tau
    small = ~zero & (t < 1)
    # 1 - (1 - t)^k without cancellation for small t
    out[small] = -np.expm1(k * np.log1p(-t[small])) / lam[small]
    rest = ~zero & ~small
    with np.errstate(over="ignore", invalid="ignore"):
        # a step with tau * lambda > 2 diverges; the overflow is the answer
        out[rest] = (1.0 - (1.0 - t[rest]) ** k) / lam[rest]
    return out


def filter_value(spec, alpha, lam):
    return float(filter_values(spec, alpha, np.array([lam]))[0])


def reconstruct_filtered(f, spec, alpha, y):
    """``B_alpha y = sum_i g_alpha(s_i^2) s_i <u_i, y> v_i``."""
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, f.out_dim, "data")
    gains = filter_values(spec, alpha, f.s**2) * f.s
    return ((y @ f.U) * gains) @ f.V.T


def filter_matrix(f, spec, alpha):
    """Dense ``B_alpha`` (``n x m``)."""
    return reconstruct_filtered(f, spec, alpha, np.eye(f.out_dim)).T


@dataclass(frozen=True)
class ParameterRule:
    """A-priori rule ``alpha(delta) = c delta^gamma`` with ``0 < gamma < 1``."""

    c: float = 1.0
    gamma: float = 2.0 / 3.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("scale c must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError(
                f"exponent gamma={self.gamma} outside (0, 1): need alpha -> 0 and delta/alpha -> 0"
            )


def apriori_choice(rule, delta):
    if delta <= 0:
        raise ValueError("delta must be positive")
    return rule.c * delta**rule.gamma


@dataclass
class FilterReport:
    """Outcome of :func:`verify_filter_conditions`.

    ``deviations[i]`` is ``|lambda_i g_alpha(lambda_i) - 1|`` at the smallest
    alpha; ``jump_points[j]`` lists the detected discontinuities at
    ``alpha_grid[j]``.
    """

    bound_observed: float
    lambda_grid: np.ndarray
    deviations: np.ndarray
    max_deviation: float
    jump_points: list = field(default_factory=list)
    bounded: bool = False
    pointwise: bool = False
    piecewise_continuous: bool = False

    @property
    def passed(self):
        return self.bounded and self.pointwise and self.piecewise_continuous


def _jumps(spec, alpha, grid, bisections=60):
    # follow the larger half-variation in every cell at once; a jump keeps
    # its variation as the cell shrinks, a continuous piece does not
    g = filter_values(spec, alpha, grid)
    if not np.all(np.isfinite(g)):
        return []
    scale = max(float(np.max(np.abs(g))), 1.0)
    var = np.abs(np.diff(g))
    cells = np.flatnonzero(var > 1e-9 * scale)
    lo = grid[cells].copy()
    hi = grid[cells + 1].copy()
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        gl = filter_values(spec, alpha, lo)
        gm = filter_values(spec, alpha, mid)
        gh = filter_values(spec, alpha, hi)
        left = np.abs(gm - gl) >= np.abs(gh - gm)
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
    final = np.abs(filter_values(spec, alpha, hi) - filter_values(spec, alpha, lo))
    keep = final >= 0.25 * var[cells]
    return [float(v) for v in 0.5 * (lo[keep] + hi[keep])]


def verify_filter_conditions(spec, alpha_grid, lambda_max, n_lambda=400, limit_tol=1e-2):
    """Check the three defining properties of a regularizing filter on grids.

    * uniform bound: ``sup |lambda g_alpha(lambda)|`` over both grids;
    * pointwise limit: for each fixed ``lambda`` on a grid in
      ``[lambda_max / 100, lambda_max]`` the deviation ``|lambda g - 1|`` is
      non-increasing along the (descending) alpha grid and at most
      ``limit_tol`` at its end;
    * piecewise continuity: discontinuities located by bisection; finitely
      many (at most one per grid cell) are allowed.
    """
    alphas = np.asarray(alpha_grid, dtype=np.float64)
    if np.any(np.diff(alphas) >= 0):
        raise ValueError("alpha_grid must be strictly descending")
    lam_full = np.linspace(0.0, lambda_max, n_lambda)
    lam_fixed = np.geomspace(lambda_max / 100.0, lambda_max, 50)
    bound = 0.0
    jumps = []
    devs = []
    for a in alphas:
        bound = max(bound, float(np.max(np.abs(lam_full * filter_values(spec, a, lam_full)))))
        devs.append(np.abs(lam_fixed * filter_values(spec, a, lam_fixed) - 1.0))
        jumps.append(_jumps(spec, a, lam_full))
    devs = np.array(devs)
    with np.errstate(invalid="ignore"):
        monotone = bool(np.all(np.diff(devs, axis=0) <= 1e-12))
    final = devs[-1]
    return FilterReport(
        bound_observed=bound,
        lambda_grid=lam_fixed,
        deviations=final,
        max_deviation=float(np.max(final)),
        jump_points=jumps,
        bounded=bool(bound <= spec.bound_constant + 1e-12),
        pointwise=monotone and float(np.max(final)) <= limit_tol,
        piecewise_continuous=all(len(j) <= n_lambda - 1 for j in jumps),
    )
