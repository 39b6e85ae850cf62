"""Unrolled iterative reconstruction: variational networks, cascades, MODL and INDIE.

MODL and INDIE blocks share the Tikhonov-type objective
``T(x) = |A x - y|^2 + alpha |x - N(x)|^2`` and, for a fixed denoiser ``N``,
the fixed-point equation ``(A^T A + alpha I) x = A^T y + alpha N(x)``. INDIE
minimizes the surrogate ``L_n`` explicitly and needs ``C >= |A|^2`` so that
``L_n`` majorizes ``T``.
"""
from dataclasses import dataclass, field

import numpy as np

from netreg import linops, nets, training
from netreg.errors import ConfigError, ConvergenceError, DimensionError, check_dim
from netreg.variational import SolverReport

UNROLLED_KINDS = ("varnet", "cascade", "modl", "indie")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Potential:
    """Scalar potential with ``rho'(t) = a tanh(t / b)`` (log-cosh) or ``a t`` (quadratic)."""

    a: float = 1.0
    b: float = 1.0
    kind: str = "logcosh"

    def __post_init__(self):
        if self.kind not in ("logcosh", "quadratic"):
            raise ValueError(f"unknown potential {self.kind!r}")
        if not self.b > 0:
            raise ValueError("potential scale b must be positive")

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "quadratic":
            return 0.5 * self.a * t * t
        u = np.abs(t / self.b)
        # log cosh u without overflow
        return self.a * self.b * (u + np.log1p(np.exp(-2.0 * u)) - np.log(2.0))

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "quadratic":
            return self.a * t
        return self.a * np.tanh(t / self.b)


@dataclass(frozen=True)
class VarNetCycle:
    """One cycle ``c`` of a variational network.

    ``image_kernels[i]`` (``Kbar_i``) act on the image space and carry
    ``phi[i]``; ``data_kernels[i]`` (``K_i``) act on the data space and carry
    ``psi[i]``.
    """

    image_kernels: tuple
    phi: tuple
    data_kernels: tuple = ()
    psi: tuple = ()

    def __post_init__(self):
        if len(self.image_kernels) != len(self.phi) or len(self.data_kernels) != len(self.psi):
            raise ValueError("one potential per kernel required")


@dataclass(frozen=True)
class VarNetParams:
    """Cycles, step sizes ``eta_n`` (reused cyclically) and the data weight ``alpha``.

    ``T_c(x) = sum_i sum_j phi_i((Kbar_i x)_j) + alpha sum_i sum_j psi_i((K_i (A x - y))_j)``.
    """

    cycles: tuple
    steps: tuple = (0.1,)
    alpha: float = 1.0

    def __post_init__(self):
        if not self.cycles:
            raise ValueError("at least one cycle required")
        if not self.steps or any(s <= 0 for s in self.steps):
            raise ValueError("step sizes must be positive")

    def step(self, n):
        return self.steps[n % len(self.steps)]


@dataclass(frozen=True)
class CascadeConfig:
    """Sparse-data operator ``A = S A_F`` with ``A_F`` orthogonal, so ``B_F = A_F^T``."""

    full_op: linops.LinearOperator
    sampler: linops.MaskedSampling
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        n = self.full_op.in_dim
        if self.full_op.out_dim != n or self.sampler.in_dim != n:
            raise DimensionError("A_F must be square and match the sampler")
        M = linops.materialize(self.full_op)
        if np.max(np.abs(M.T @ M - np.eye(n))) > 1e-10:
            raise ValueError("A_F is not orthogonal to 1e-10")

    @property
    def op(self):
        return self.sampler @ self.full_op


def dct_matrix(n):
    """Orthonormal DCT-II matrix."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    M = np.cos(np.pi * (j + 0.5) * k / n) * np.sqrt(2.0 / n)
    M[0] /= np.sqrt(2.0)
    return M


@dataclass(frozen=True)
class UnrolledConfig:
    """Settings shared by the unrolled schemes.

    ``denoiser`` is shared across blocks unless ``denoisers`` lists one per
    block. ``C`` defaults to ``|A|^2`` (INDIE). ``cascade`` and ``varnet``
    carry the scheme-specific parameters.
    """

    n_blocks: int
    alpha: float = 1.0
    C: float | None = None
    denoiser: object = None
    denoisers: tuple | None = None
    tol: float = 1e-10
    max_iter: int | None = None
    cascade: CascadeConfig | None = None
    varnet: VarNetParams | None = None

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ConfigError("n_blocks must be non-negative")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.denoisers is not None and len(self.denoisers) != self.n_blocks:
            raise ConfigError(f"{len(self.denoisers)} denoisers for {self.n_blocks} blocks")

    def denoiser_at(self, n):
        if self.denoisers is not None:
            return self.denoisers[n]
        if self.denoiser is None:
            raise ConfigError("no denoiser configured")
        return self.denoiser


def majorization_constant(op, C=None):
    """Validate ``C >= |A|^2`` (power-iteration estimate); default to that estimate."""
    norm2 = linops.operator_norm(op, tol=1e-12) ** 2
    if C is None:
        return norm2 * (1.0 + 1e-9)
    if C < norm2:
        raise ConfigError(f"C={C} below |A|^2={norm2}: the surrogate would not majorize")
    return float(C)


# --------------------------------------------------------------------------
# blocks


def varnet_gradient(params, op, y, x, c):
    """``grad T_c(x) = sum Kbar^T phi'(Kbar x) + alpha A^T sum K^T psi'(K (A x - y))``."""
    cyc = params.cycles[c]
    g = np.zeros_like(x, dtype=np.float64)
    for K, pot in zip(cyc.image_kernels, cyc.phi):
        g = g + K.adjoint(pot.derivative(K.apply(x)))
    if cyc.data_kernels:
        r = op.apply(x) - y
        gd = np.zeros_like(r)
        for K, pot in zip(cyc.data_kernels, cyc.psi):
            gd = gd + K.adjoint(pot.derivative(K.apply(r)))
        g = g + params.alpha * op.adjoint(gd)
    return g


def varnet_objective(params, op, y, x, c):
    cyc = params.cycles[c]
    val = sum(float(np.sum(pot.value(K.apply(x)))) for K, pot in zip(cyc.image_kernels, cyc.phi))
    if cyc.data_kernels:
        r = op.apply(x) - y
        val += params.alpha * sum(float(np.sum(pot.value(K.apply(r)))) for K, pot in zip(cyc.data_kernels, cyc.psi))
    return val


def varnet_step(params, op, y, x_n, n):
    """``x_{n+1} = x_n - eta_n grad T_{c(n)}(x_n)`` with ``c(n) = n mod N_c`` (zero-based)."""
    x_n = np.asarray(x_n, dtype=np.float64)
    check_dim(x_n, op.in_dim, "iterate")
    c = n % len(params.cycles)
    return x_n - params.step(n) * varnet_gradient(params, op, y, x_n, c)


def cascade_init(cfg, y):
    """``x_0 = B_F S^* y``."""
    return cfg.full_op.adjoint(cfg.sampler.adjoint(y))


def cascade_dc_step(cfg, denoiser, y, x_n):
    """Data consistency in the transform domain, then ``B_F = A_F^T``."""
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, cfg.sampler.out_dim, "data")
    w = cfg.full_op.apply(denoiser(x_n))
    z = np.array(w)
    idx = cfg.sampler.indices
    z[..., idx] = (w[..., idx] + cfg.alpha * y) / (1.0 + cfg.alpha)
    return cfg.full_op.adjoint(z)


@dataclass
class CGResult:
    x: np.ndarray
    residual: float
    iterations: int


def cg_solve(apply, b, x0=None, tol=1e-10, max_iter=None):
    """Conjugate gradients for symmetric positive definite ``apply``.

    Stops at ``|b - apply(x)| <= tol |b|``; the reported residual is relative
    and recomputed from scratch.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0.0, 0)
    max_iter = max_iter or 10 * b.size
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply(x)
    p = r.copy()
    rr = float(r @ r)
    it = 0
    while np.sqrt(rr) > tol * bnorm and it < max_iter:
        q = apply(p)
        step = rr / float(p @ q)
        x += step * p
        r -= step * q
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        if it % 50 == 0:
            # refresh against drift of the recursive residual
            r = b - apply(x)
            rr = float(r @ r)
    res = float(np.linalg.norm(b - apply(x))) / bnorm
    if res > tol:
        raise ConvergenceError("CG did not reach the tolerance", last_iterate=x, residual=res, iterations=it)
    return CGResult(x, res, it)


def modl_solve(op, denoiser, y, x_n, alpha, tol=1e-10, max_iter=None):
    """MODL block as a :class:`CGResult` (relative residual of the linear system)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x_n = np.asarray(x_n, dtype=np.float64)
    rhs = op.adjoint(y) + alpha * denoiser(x_n)
    return cg_solve(lambda v: op.adjoint(op.apply(v)) + alpha * v, rhs, x0=x_n, tol=tol, max_iter=max_iter)


def modl_block(op, denoiser, y, x_n, alpha, tol=1e-10, max_iter=None):
    """``x_{n+1} = (A^T A + alpha I)^{-1} (A^T y + alpha N(x_n))``."""
    return modl_solve(op, denoiser, y, x_n, alpha, tol, max_iter).x


def indie_block(op, denoiser, y, x_n, alpha, C):
    """``x_{n+1} = (A^T (y - A x_n) + alpha N(x_n) + C x_n) / (alpha + C)``."""
    x_n = np.asarray(x_n, dtype=np.float64)
    return (op.adjoint(y - op.apply(x_n)) + alpha * denoiser(x_n) + C * x_n) / (alpha + C)


def indie_surrogate(op, z, y, x_n, alpha, C, x):
    """``L_n(x) = |A x - y|^2 + alpha |x - z|^2 + C |x - x_n|^2 - |A (x - x_n)|^2`` with ``z = N(x_n)``."""
    r = op.apply(x) - y
    d = x - x_n
    ad = op.apply(d)
    return float(r @ r + alpha * (x - z) @ (x - z) + C * d @ d - ad @ ad)


def indie_surrogate_expanded(op, z, y, x_n, alpha, C, x):
    """The same ``L_n`` written as a quadratic in ``x``."""
    ax_n = op.apply(x_n)
    lin = op.adjoint(y - ax_n) + alpha * z + C * x_n
    const = alpha * float(z @ z) + C * float(x_n @ x_n) - float(ax_n @ ax_n) + float(y @ y)
    return -2.0 * float(lin @ x) + (alpha + C) * float(x @ x) + const


def frozen_objective(op, z, y, x, alpha):
    """``T_z(x) = |A x - y|^2 + alpha |x - z|^2``, the objective ``L_n`` majorizes."""
    r = op.apply(x) - y
    d = x - z
    return float(r @ r) + alpha * float(d @ d)


def block_objective(op, denoiser, y, x, alpha):
    """``T(x) = |A x - y|^2 + alpha |x - N(x)|^2``."""
    r = op.apply(x) - y
    d = x - denoiser(x)
    return float(r @ r) + alpha * float(d @ d)


# --------------------------------------------------------------------------
# driver


def run_unrolled(kind, config, op, y, x0=None):
    """Apply ``config.n_blocks`` blocks of the chosen scheme.

    ``x0`` defaults to ``A^T y`` (``B_F S^* y`` for cascades). ``objective[n]``
    records ``T(x_n)`` for MODL and INDIE, ``sum_c T_c(x_n)`` for variational
    networks and ``|A x_n - y|^2`` for cascades. MODL stores the relative CG
    residual of every block in ``info["cg_residuals"]``. INDIE stores
    ``T_z(x_{n+1}) - T_z(x_n)`` with ``z = N(x_n)`` frozen in
    ``info["frozen_decrease"]``; these are non-positive by majorization. The
    trace of ``T`` itself is non-increasing when ``N`` has constant output, but
    not for every denoiser.
    """
    if kind not in UNROLLED_KINDS:
        raise ConfigError(f"unknown unrolled kind {kind!r}; expected one of {UNROLLED_KINDS}")
    y = np.asarray(y, dtype=np.float64)
    check_dim(y, op.out_dim, "data")
    info = {}
    if kind == "cascade":
        if config.cascade is None:
            raise ConfigError("cascade kind needs a CascadeConfig")
        default = cascade_init(config.cascade, y)
    else:
        default = op.adjoint(y)
    x = default if x0 is None else np.array(x0, dtype=np.float64)

    if kind in ("modl", "indie"):
        def objective(v, n):
            return block_objective(op, config.denoiser_at(min(n, config.n_blocks - 1)), y, v, config.alpha)
    elif kind == "varnet":
        if config.varnet is None:
            raise ConfigError("varnet kind needs VarNetParams")
        def objective(v, n):
            return sum(varnet_objective(config.varnet, op, y, v, c) for c in range(len(config.varnet.cycles)))
    else:
        def objective(v, n):
            r = op.apply(v) - y
            return float(r @ r)

    if kind == "indie":
        C = majorization_constant(op, config.C)
        info["C"] = C
        info["frozen_decrease"] = []
    if kind == "modl":
        info["cg_residuals"] = []

    trace = [objective(x, 0)] if config.n_blocks > 0 else []
    for n in range(config.n_blocks):
        if kind == "varnet":
            x = varnet_step(config.varnet, op, y, x, n)
        elif kind == "cascade":
            x = cascade_dc_step(config.cascade, config.denoiser_at(n), y, x)
        elif kind == "modl":
            res = modl_solve(op, config.denoiser_at(n), y, x, config.alpha, config.tol, config.max_iter)
            info["cg_residuals"].append(res.residual)
            x = res.x
        else:
            N = config.denoiser_at(n)
            z = N(x)
            before = frozen_objective(op, z, y, x, config.alpha)
            x = indie_block(op, N, y, x, config.alpha, C)
            info["frozen_decrease"].append(frozen_objective(op, z, y, x, config.alpha) - before)
        trace.append(objective(x, n))
    return SolverReport(
        x=x, objective=trace, termination="max_iter", iterations=config.n_blocks, info=info
    )


# --------------------------------------------------------------------------
# end-to-end INDIE training


@dataclass
class IndieNetwork:
    """Unrolled INDIE map ``y -> x_L`` with trainable denoiser(s)."""

    op: linops.LinearOperator
    denoisers: tuple
    n_blocks: int
    alpha: float
    C: float
    shared: bool = True
    _sizes: list = field(init=False, repr=False)

    def __post_init__(self):
        self.denoisers = tuple(self.denoisers)
        expected = 1 if self.shared else self.n_blocks
        if len(self.denoisers) != expected:
            raise ConfigError(f"expected {expected} denoisers, got {len(self.denoisers)}")
        self._sizes = [d.n_params for d in self.denoisers]

    def net_at(self, n):
        return self.denoisers[0 if self.shared else n]

    def params(self):
        return np.concatenate([d.params() for d in self.denoisers])

    def with_params(self, theta):
        parts = np.split(np.asarray(theta, dtype=np.float64), np.cumsum(self._sizes)[:-1])
        return IndieNetwork(
            self.op, [d.with_params(p) for d, p in zip(self.denoisers, parts)],
            self.n_blocks, self.alpha, self.C, self.shared,
        )

    def __call__(self, y):
        return indie_forward(self, y)[0]


def indie_forward(model, y):
    """Unrolled map on a batch of data rows; returns ``(x_L, caches)``."""
    y = np.asarray(y, dtype=np.float64)
    x = model.op.adjoint(y)
    caches = []
    aty = x
    for n in range(model.n_blocks):
        out, cache = nets.net_forward(model.net_at(n), x)
        caches.append(cache)
        x = (aty - model.op.adjoint(model.op.apply(x)) + model.alpha * out + model.C * x) / (model.alpha + model.C)
    return x, caches


def indie_backward(model, caches, grad_output):
    """Gradient over the stacked denoiser parameters of ``<grad_output, x_L>``."""
    g = np.asarray(grad_output, dtype=np.float64)
    grads = [np.zeros(d.n_params) for d in model.denoisers]
    for n in reversed(range(model.n_blocks)):
        gs = g / (model.alpha + model.C)
        k = 0 if model.shared else n
        gp, gi = nets.net_backward(model.net_at(n), caches[n], model.alpha * gs)
        grads[k] += gp
        g = model.C * gs - model.op.adjoint(model.op.apply(gs)) + gi
    return np.concatenate(grads)


def unrolled_risk(model, xs, ys, weight_decay):
    out, _ = indie_forward(model, ys)
    theta = model.params()
    data = float(np.sum((xs - out) ** 2)) / xs.shape[0]
    penalty = weight_decay * float(theta @ theta)
    return data + penalty, data, penalty


def unrolled_risk_gradient(model, xs, ys, weight_decay):
    out, caches = indie_forward(model, ys)
    g = -2.0 * (xs - out) / xs.shape[0]
    return indie_backward(model, caches, g) + 2.0 * weight_decay * model.params()


def train_unrolled_indie(config, op, dataset, train_config=training.TrainConfig()):
    """End-to-end training of the INDIE denoiser(s); ``dataset.zs`` holds the data ``y_i``.

    Returns ``(trained IndieNetwork, trace)``.
    """
    C = majorization_constant(op, config.C)
    if config.denoisers is not None:
        model = IndieNetwork(op, config.denoisers, config.n_blocks, config.alpha, C, shared=False)
    else:
        model = IndieNetwork(op, (config.denoiser_at(0),), config.n_blocks, config.alpha, C, shared=True)
    for d in model.denoisers:
        if not isinstance(d, nets.FeedforwardNet):
            raise ConfigError("end-to-end training needs FeedforwardNet denoisers")
    xs, ys = dataset.xs, dataset.zs
    check_dim(xs, op.in_dim, "targets")
    check_dim(ys, op.out_dim, "data")

    def loss(theta):
        return unrolled_risk(model.with_params(theta), xs, ys, train_config.weight_decay)

    def gradient(theta, rows):
        m = model.with_params(theta)
        if rows is None:
            return unrolled_risk_gradient(m, xs, ys, train_config.weight_decay)
        return unrolled_risk_gradient(m, xs[rows], ys[rows], train_config.weight_decay)

    theta, trace = training.descend(model.params(), loss, gradient, train_config, len(dataset))
    return model.with_params(theta), trace
