"""Network Tikhonov (NETT) regularization and its diagnostics.

The learned regularizer is ``R(x) = phi(E(x)) + beta/2 |x - D(E(x))|^2`` with an
encoder ``E``, a decoder ``D`` and a weighted power functional
``phi(xi) = sum_l w_l rho(xi_l)``, where ``rho(t) = |t|^p`` for ``1 < p <= 2``
and ``rho(t) = sqrt(t^2 + eps^2) - eps`` for ``p = 1``. The smoothing applies to
values and gradients alike, which makes ``R`` differentiable everywhere when
``eps > 0``.
"""
from dataclasses import dataclass, field

import numpy as np

from netreg import geometry, kernels, linops, nets
from netreg.errors import DimensionError, check_dim

SIMILARITY_KINDS = ("squared_norm", "kl")
TERMINATIONS = ("tolerance_met", "max_iter", "backtracking_failure")


# --------------------------------------------------------------------------
# similarity measures


@dataclass(frozen=True)
class SimilarityMeasure:
    kind: str = "squared_norm"

    def __post_init__(self):
        if self.kind not in SIMILARITY_KINDS:
            raise ValueError(f"unknown similarity {self.kind!r}; expected one of {SIMILARITY_KINDS}")

    def value(self, y1, y2):
        return similarity(self, y1, y2)

    def grad_first(self, y1, y2):
        """Gradient with respect to the first argument."""
        y1 = np.asarray(y1, dtype=np.float64)
        y2 = np.asarray(y2, dtype=np.float64)
        if self.kind == "squared_norm":
            return 2.0 * (y1 - y2)
        tiny = np.finfo(float).tiny
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(y1, tiny)) - np.log(np.maximum(y2, tiny))


def similarity(sim, y1, y2):
    """``|y1 - y2|^2`` or ``sum y1 log(y1 / y2) + y2 - y1`` on the nonnegative cone.

    Kullback-Leibler uses ``0 log(0 / b) = 0`` and returns ``inf`` when some
    ``y1_i > 0`` meets ``y2_i = 0``; negative entries raise ``ValueError``.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape:
        raise DimensionError(f"shapes {y1.shape} and {y2.shape} differ")
    if sim.kind == "squared_norm":
        d = y1 - y2
        return float(d @ d)
    if np.any(y1 < 0) or np.any(y2 < 0):
        raise ValueError("Kullback-Leibler divergence is defined on the nonnegative cone only")
    pos = y1 > 0
    if np.any(pos & (y2 == 0)):
        return float("inf")
    terms = y2 - y1
    # difference of logs: the ratio underflows for subnormal y1
    terms[pos] += y1[pos] * (np.log(y1[pos]) - np.log(y2[pos]))
    return float(np.sum(terms))


def kl_quadratic_constant(upper, n_grid=400):
    """Grid estimate of the largest ``C`` with ``KL(a, b) >= C (a - b)^2`` on ``[0, upper]^2``.

    The divergence is a sum of coordinate terms, so the scalar constant also
    holds for vectors in the box ``[0, upper]^n``.
    """
    g = np.linspace(0.0, upper, n_grid + 1)
    a, b = np.meshgrid(g, g[1:], indexing="ij")
    off = a != b
    a, b = a[off], b[off]
    kl = b - a
    pos = a > 0
    kl[pos] += a[pos] * (np.log(a[pos]) - np.log(b[pos]))
    return float(np.min(kl / (a - b) ** 2))


# --------------------------------------------------------------------------
# learned regularizer


def _rho(t, p, eps):
    if p == 1:
        return np.sqrt(t * t + eps * eps) - eps
    return np.abs(t) ** p


def _rho_grad(t, p, eps):
    if p == 1:
        if eps == 0:
            return np.sign(t)
        return t / np.sqrt(t * t + eps * eps)
    return p * np.abs(t) ** (p - 1) * np.sign(t)


@dataclass(frozen=True)
class LearnedRegularizer:
    """``R(x) = sum_l w_l rho(E(x)_l) + beta/2 |x - D(E(x))|^2``."""

    encoder: nets.FeedforwardNet
    decoder: nets.FeedforwardNet
    beta: float = 1.0
    weights: object = 1.0
    p: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 1 <= self.p <= 2:
            raise ValueError("exponent p must lie in [1, 2]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.encoder.out_dim != self.decoder.in_dim or self.decoder.out_dim != self.encoder.in_dim:
            raise DimensionError("encoder and decoder dims do not match")
        w = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), (self.encoder.out_dim,)).copy()
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.encoder.in_dim

    def value(self, x):
        return regularizer_value(self, x)

    def grad(self, x):
        return regularizer_grad(self, x)


def regularizer_value(reg, x):
    x = np.asarray(x, dtype=np.float64)
    check_dim(x, reg.dim, "regularizer input")
    e = reg.encoder(x)
    r = x - reg.decoder(e)
    return float(reg.weights @ _rho(e, reg.p, reg.epsilon)) + 0.5 * reg.beta * float(r @ r)


def regularizer_grad(reg, x):
    x = np.asarray(x, dtype=np.float64)
    check_dim(x, reg.dim, "regularizer input")
    e, cache_e = nets.net_forward(reg.encoder, x)
    d, cache_d = nets.net_forward(reg.decoder, e)
    r = x - d
    _, g_d = nets.net_backward(reg.decoder, cache_d, reg.beta * r)
    _, g_e = nets.net_backward(reg.encoder, cache_e, reg.weights * _rho_grad(e, reg.p, reg.epsilon) - g_d)
    return reg.beta * r + g_e


def regularizer_lipschitz_bound(reg, radius):
    """Certified bound on ``|grad R|`` over the ball ``|x| <= radius``."""
    lip_e = nets.lipschitz_upper_bound(reg.encoder)
    lip_d = nets.lipschitz_upper_bound(reg.decoder)
    zero = np.zeros(reg.dim)
    e0 = reg.encoder(zero)
    e_max = float(np.linalg.norm(e0)) + lip_e * radius
    if reg.p == 1:
        phi_grad = float(np.linalg.norm(reg.weights))
    else:
        phi_grad = reg.p * float(np.linalg.norm(reg.weights)) * e_max ** (reg.p - 1)
    r_max = radius + float(np.linalg.norm(reg.decoder(e0))) + lip_d * lip_e * radius
    return float(lip_e * (phi_grad + lip_d * reg.beta * r_max) + reg.beta * r_max)


# --------------------------------------------------------------------------
# solver plumbing


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 20000
    max_halvings: int = 50
    armijo: float = 1e-4
    initial_step: float = 1.0
    x0: np.ndarray | None = None


@dataclass
class SolverReport:
    """Result of an iterative scheme.

    ``objective[k]`` is the objective at iterate ``k`` (``objective[0]`` at the
    start); ``steps[k]`` the accepted step size of iteration ``k + 1``.
    """

    x: np.ndarray
    objective: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    termination: str = "max_iter"
    iterations: int = 0
    info: dict = field(default_factory=dict)


def projected_gradient(fun, grad, x0, project=None, config=SolverConfig()):
    """Projected gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    Stops once the projected-gradient norm ``|x - P(x - g)|`` drops to
    ``tol * max(1, initial value)``. ``backtracking_failure`` usually means the
    objective has reached its floating-point floor; ``info["projected_gradient"]``
    holds the final stationarity measure.

    The accepted iterates satisfy
    ``f(x+) <= f(x) + armijo * <g, x+ - x>`` with ``<g, x+ - x> < 0``, so the
    objective trace is non-increasing.
    """
    project = project or (lambda v: v)
    x = project(np.array(x0, dtype=np.float64))
    fx = fun(x)
    g = grad(x)
    report = SolverReport(x=x, objective=[fx])
    pg0 = float(np.linalg.norm(x - project(x - g)))
    target = config.tol * max(1.0, pg0)
    step = config.initial_step
    x_prev = g_prev = None
    for it in range(1, config.max_iter + 1):
        pg = float(np.linalg.norm(x - project(x - g)))
        if pg <= target:
            report.termination = "tolerance_met"
            report.iterations = it - 1
            break
        if x_prev is not None:
            dx, dg = x - x_prev, g - g_prev
            curv = float(dx @ dg)
            if curv > 0:
                step = min(max(float(dx @ dx) / curv, 1e-12), 1e12)
        accepted = False
        trial_step = step
        for _ in range(config.max_halvings + 1):
            x_new = project(x - trial_step * g)
            decrease = float(g @ (x_new - x))
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= fx + config.armijo * decrease and decrease < 0:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            report.termination = "backtracking_failure"
            report.iterations = it - 1
            break
        x_prev, g_prev = x, g
        x, fx = x_new, f_new
        g = grad(x)
        step = trial_step
        report.objective.append(fx)
        report.steps.append(trial_step)
    else:
        report.iterations = config.max_iter
        pg = float(np.linalg.norm(x - project(x - g)))
        if pg <= target:
            report.termination = "tolerance_met"
    report.x = x
    report.info["projected_gradient"] = float(np.linalg.norm(x - project(x - g)))
    report.info["target"] = target
    return report


def _nonneg(v):
    return np.maximum(v, 0.0)


# --------------------------------------------------------------------------
# NETT


@dataclass(frozen=True)
class TikhonovProblem:
    """``T(x) = d(A x, y) + alpha R(x)`` over the whole space or the nonnegative orthant."""

    op: linops.LinearOperator
    data: np.ndarray
    alpha: float
    reg: object
    sim: SimilarityMeasure = SimilarityMeasure()
    constraint: str | None = None

    def __post_init__(self):
        y = np.asarray(self.data, dtype=np.float64)
        check_dim(y, self.op.out_dim, "data")
        object.__setattr__(self, "data", y)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.constraint not in (None, "nonnegative"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.reg.dim != self.op.in_dim:
            raise DimensionError(f"regularizer acts on R^{self.reg.dim}, operator on R^{self.op.in_dim}")

    def objective(self, x):
        ax = self.op.apply(x)
        if self.sim.kind == "kl" and np.any(ax < 0):
            return float("inf")
        return similarity(self.sim, ax, self.data) + self.alpha * self.reg.value(x)

    def gradient(self, x):
        ax = self.op.apply(x)
        return self.op.adjoint(self.sim.grad_first(ax, self.data)) + self.alpha * self.reg.grad(x)


def nett_solve(problem, config=SolverConfig()):
    """Minimize the NETT functional by projected gradient descent."""
    if problem.sim.kind == "kl":
        if np.any(linops.materialize(problem.op) < 0):
            raise ValueError("Kullback-Leibler fidelity needs a positive operator (nonnegative matrix)")
        if np.any(problem.data < 0):
            raise ValueError("Kullback-Leibler fidelity needs nonnegative data")
    project = _nonneg if problem.constraint == "nonnegative" else None
    x0 = np.zeros(problem.op.in_dim) if config.x0 is None else config.x0
    return projected_gradient(problem.objective, problem.gradient, x0, project, config)


# --------------------------------------------------------------------------
# Bregman diagnostics


def bregman_distance(reg, x_tilde, x):
    """``|R(x~) - R(x) - <R'(x), x~ - x>|``; ``reg`` needs ``value`` and ``grad``."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return abs(reg.value(x_tilde) - reg.value(x) - float(reg.grad(x) @ (x_tilde - x)))


def total_nonlinearity_probe(reg, x, t, n_samples=64, seed=0):
    """Sampled upper bound on the modulus of total nonlinearity at ``x``.

    Returns the minimum Bregman distance over ``n_samples`` seeded unit
    directions at distance ``t``. The infimum over the whole sphere can be
    smaller; the returned number never underestimates it. Directions for a
    smaller ``n_samples`` are a prefix of those for a larger one.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_samples, x.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return min(bregman_distance(reg, x + t * u, x) for u in dirs)


class NotInRange(ValueError):
    """Data is detectably outside the range of the operator."""


def r_minimizing_oracle(op, reg, y, starts=8, seed=0, config=None, range_tol=1e-8, factorization=None):
    """Minimize ``R`` over the solution set ``{A^+ y + K c}`` of ``A x = y``.

    ``K`` is an orthonormal kernel basis. Each of ``starts`` seeded starting
    points (the first is ``c = 0``) runs gradient descent; the result with the
    lowest ``(R, start index)`` wins.
    """
    y = np.asarray(y, dtype=np.float64)
    f = factorization if factorization is not None else linops.svd(op)
    residual = float(np.linalg.norm(y - geometry.range_project(f, y)))
    if residual > range_tol * max(float(np.linalg.norm(y)), np.finfo(float).tiny):
        raise NotInRange(f"data is outside ran(A): residual {residual:.3e}")
    xp = geometry.pseudoinverse_apply(f, y)
    K = geometry.kernel_basis(f)
    if K.shape[1] == 0:
        return xp
    config = config or SolverConfig(tol=1e-12, max_iter=50000)
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.linalg.norm(xp)))
    best = None
    for k in range(starts):
        c0 = np.zeros(K.shape[1]) if k == 0 else rng.standard_normal(K.shape[1]) * scale / np.sqrt(K.shape[1])
        rep = projected_gradient(
            lambda c: reg.value(xp + K @ c),
            lambda c: K.T @ reg.grad(xp + K @ c),
            c0,
            config=config,
        )
        key = (rep.objective[-1], k)
        if best is None or key < best[0]:
            best = (key, rep.x)
    return xp + K @ best[1]


@dataclass(frozen=True)
class UpperBoundConstants:
    """Constants of ``Delta_R(x, x+) <= R(x) - R(x+) + C |A x - A x+|``.

    ``gamma0`` bounds ``A`` from below on ``ker(A)^perp``; ``gamma = L / gamma0``
    with ``L`` a Lipschitz constant of ``R``; ``gamma1 = |R'(x+)| / gamma0``.
    """

    gamma0: float
    lipschitz: float
    gamma: float
    gamma1: float

    @property
    def C(self):
        return 2.0 * self.gamma + self.gamma1


def upper_bound_constants(f, reg, x_dagger, radius):
    """Constants for points ``x`` with ``|x| + |x+| <= radius``."""
    gamma0 = float(f.s[-1])
    lip = regularizer_lipschitz_bound(reg, radius)
    return UpperBoundConstants(
        gamma0=gamma0,
        lipschitz=lip,
        gamma=lip / gamma0,
        gamma1=float(np.linalg.norm(reg.grad(x_dagger))) / gamma0,
    )


# --------------------------------------------------------------------------
# synthesis


def prox_power(v, threshold, p):
    """Minimizer of ``1/2 (u - v)^2 + threshold |u|^p``, elementwise."""
    v = np.asarray(v, dtype=np.float64)
    threshold = np.asarray(threshold, dtype=np.float64)
    if p == 1:
        return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)
    if p == 2:
        return v / (1.0 + 2.0 * threshold)
    if not 1 < p < 2:
        raise ValueError("p must lie in [1, 2]")
    return kernels.prox_power(v, threshold, p)


@dataclass
class SynthesisResult:
    codes: np.ndarray
    x: np.ndarray
    report: SolverReport


def synthesis_solve(op, decoder, y, alpha, weights=1.0, p=1.0, config=SolverConfig(), xi0=None):
    """Proximal gradient (ISTA) for ``min |A D(xi) - y|^2 + alpha sum w |xi|^p``.

    A trial step is accepted when the quadratic upper model holds at the new
    point and the objective does not increase; otherwise it is halved.
    """
    if not 1 <= p <= 2:
        raise ValueError("p must lie in [1, 2]")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, op.out_dim, "data")
    if decoder.out_dim != op.in_dim:
        raise DimensionError("decoder output does not match operator input")
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (decoder.in_dim,))
    if np.any(w <= 0):
        raise ValueError("weights must be positive")

    def smooth(xi):
        r = op.apply(decoder(xi)) - y
        return float(r @ r)

    def smooth_grad(xi):
        out, cache = nets.net_forward(decoder, xi)
        r = op.apply(out) - y
        return nets.net_backward(decoder, cache, op.adjoint(2.0 * r))[1]

    def penalty(xi):
        return alpha * float(w @ np.abs(xi) ** p)

    xi = np.zeros(decoder.in_dim) if xi0 is None else np.array(xi0, dtype=np.float64)
    fx = smooth(xi)
    Fx = fx + penalty(xi)
    report = SolverReport(x=xi, objective=[Fx])
    step = config.initial_step
    for it in range(1, config.max_iter + 1):
        g = smooth_grad(xi)
        accepted = False
        for _ in range(config.max_halvings + 1):
            xi_new = prox_power(xi - step * g, step * alpha * w, p)
            d = xi_new - xi
            f_new = smooth(xi_new)
            F_new = f_new + penalty(xi_new)
            model = fx + float(g @ d) + float(d @ d) / (2.0 * step)
            if f_new <= model + 1e-15 * abs(model) and F_new <= Fx:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            report.termination = "backtracking_failure"
            report.iterations = it - 1
            break
        xi, fx, Fx = xi_new, f_new, F_new
        report.objective.append(Fx)
        report.steps.append(step)
        if float(np.linalg.norm(d)) / step <= config.tol:
            report.termination = "tolerance_met"
            report.iterations = it
            break
        step *= 2.0
    else:
        report.iterations = config.max_iter
    report.x = xi
    return SynthesisResult(codes=xi, x=decoder(xi), report=report)
