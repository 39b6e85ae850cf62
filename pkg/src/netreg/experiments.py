"""Fixtures and study runners behind the command-line harness.

Every random draw is derived from an explicit seed through
``np.random.SeedSequence``, so a study is a pure function of its arguments.
"""
from dataclasses import dataclass

import numpy as np

from netreg import filters, geometry, linops, nets, training, unrolled, variational

PHANTOM_KINDS = ("piecewise_constant", "constant")
PROBLEM_KINDS = ("deconvolution", "sparse_sampling", "dense_random")


def _rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def generate_phantoms(kind, count, dim, seed):
    """Seeded signals with values in ``[-1, 1]``; row ``i`` is signal ``i``.

    ``piecewise_constant`` signals have between 1 and 5 constant pieces;
    ``constant`` signals are scaled all-ones vectors.
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    if count < 1 or dim < 1:
        raise ValueError("count and dim must be positive")
    rng = _rng(seed, 0)
    out = np.empty((count, dim))
    for i in range(count):
        if kind == "constant":
            out[i] = rng.uniform(-1.0, 1.0)
            continue
        pieces = int(rng.integers(1, min(5, dim) + 1))
        cuts = np.sort(rng.choice(np.arange(1, dim), size=pieces - 1, replace=False)) if pieces > 1 else []
        bounds = np.concatenate([[0], cuts, [dim]]).astype(int)
        values = rng.uniform(-1.0, 1.0, size=pieces)
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            out[i, lo:hi] = v
    return out


def add_noise(y, delta, seed):
    """``y + xi`` with ``|xi| = delta`` along a seeded Gaussian direction."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    if delta == 0:
        return y.copy()
    xi = _rng(seed, 1).standard_normal(y.shape)
    return y + delta * xi / np.linalg.norm(xi)


# --------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class ProblemSpec:
    """Forward problem.

    * ``deconvolution``: circular Gaussian blur of standard deviation
      ``width`` on ``R^n``.
    * ``sparse_sampling``: a seeded ``fraction`` of the orthonormal DCT-II
      coefficients of ``x`` (always keeping the constant mode).
    * ``dense_random``: ``m x n`` Gaussian matrix scaled by ``1 / sqrt(n)``.
    """

    kind: str = "deconvolution"
    n: int = 32
    m: int = 16
    width: float = 1.5
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}")
        if self.n < 2 or self.m < 1:
            raise ValueError("n must be at least 2 and m positive")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")


def gaussian_kernel(n, width):
    d = np.minimum(np.arange(n), n - np.arange(n))
    k = np.exp(-0.5 * (d / width) ** 2)
    return k / k.sum()


def sampling_indices(n, fraction, seed):
    count = max(1, int(round(fraction * n)))
    rest = _rng(seed, 2).choice(np.arange(1, n), size=count - 1, replace=False)
    return np.sort(np.concatenate([[0], rest])).astype(int)


def build_operator(spec):
    if spec.kind == "deconvolution":
        return linops.CircularConvolution(gaussian_kernel(spec.n, spec.width), spec.n)
    if spec.kind == "sparse_sampling":
        S = linops.MaskedSampling(sampling_indices(spec.n, spec.fraction, spec.seed), spec.n)
        return S @ linops.DenseOperator(unrolled.dct_matrix(spec.n))
    M = _rng(spec.seed, 3).standard_normal((spec.m, spec.n)) / np.sqrt(spec.n)
    return linops.DenseOperator(M)


def build_cascade(spec, alpha):
    if spec.kind != "sparse_sampling":
        raise ValueError("cascades need the sparse_sampling problem")
    S = linops.MaskedSampling(sampling_indices(spec.n, spec.fraction, spec.seed), spec.n)
    return unrolled.CascadeConfig(linops.DenseOperator(unrolled.dct_matrix(spec.n)), S, alpha)


# --------------------------------------------------------------------------
# fixture networks


def fixture_regularizer(n, latent, seed=0, beta=1.0, p=1.5, weight=0.1, epsilon=1e-6, scale=0.8):
    """Learned regularizer with a tanh encoder and a tied linear decoder.

    The bounded encoder makes ``R`` coercive: ``R(t u)`` grows like
    ``beta t^2 / 2`` along every ray.
    """
    rng = _rng(seed, 4)
    W = rng.standard_normal((latent, n))
    W *= scale / linops.svd(linops.DenseOperator(W)).s_max
    b = 0.1 * rng.standard_normal(latent)
    E = nets.FeedforwardNet([nets.Layer(W, b, "tanh")])
    D = nets.FeedforwardNet([nets.Layer(W.T.copy(), np.zeros(n), "identity")])
    return variational.LearnedRegularizer(E, D, beta=beta, weights=weight, p=p, epsilon=epsilon)


def zero_output_net(dims, activations, seed=0):
    """Glorot-initialized network whose last layer is zero, so ``N = 0`` at start."""
    net = nets.init_params(dims, activations, seed=seed)
    last = net.layers[-1]
    layers = list(net.layers[:-1]) + [
        nets.Layer(np.zeros_like(last.weight), np.zeros(last.out_dim), last.activation, last.slope)
    ]
    return nets.FeedforwardNet(layers)


# --------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class FilterStudyRow:
    kind: str
    delta: float
    alpha: float
    mean_error: float
    max_error: float


def alpha_function(rule):
    """``alpha(delta)`` from a :class:`filters.ParameterRule` or any callable."""
    if isinstance(rule, filters.ParameterRule):
        return lambda delta: filters.apriori_choice(rule, delta)
    if callable(rule):
        return rule
    raise TypeError("rule must be a ParameterRule or a callable alpha(delta)")


def reconstruction_errors(reconstruct, op, phantoms, delta, seed, delta_index):
    """``|x_i - reconstruct(A x_i + xi_i)|`` with per-cell noise seeds."""
    errs = []
    for i, x in enumerate(phantoms):
        y = add_noise(op.apply(x), delta, _rng(seed, 5, delta_index, i).integers(2**31))
        errs.append(float(np.linalg.norm(x - reconstruct(y))))
    return np.array(errs)


def filter_study(op, phantoms, kinds, rule, deltas, seed=0, factorization=None):
    f = factorization or linops.svd(op)
    alpha_of = alpha_function(rule)
    rows = []
    for kind in kinds:
        spec = filters.FilterSpec(kind, step=1.0 / f.s_max**2)
        for k, delta in enumerate(deltas):
            alpha = float(alpha_of(delta))
            errs = reconstruction_errors(
                lambda y: filters.reconstruct_filtered(f, spec, alpha, y), op, phantoms, delta, seed, k
            )
            rows.append(FilterStudyRow(kind, float(delta), alpha, float(errs.mean()), float(errs.max())))
    return rows


def nullspace_training_set(op, f, phantoms):
    """Exact-data pairs ``(x_i, A^+ A x_i)``."""
    xs = np.atleast_2d(np.asarray(phantoms, dtype=np.float64))
    return training.Dataset(xs, geometry.pseudoinverse_apply(f, op.apply(xs)))


def train_nullspace(op, f, phantoms, hidden, train_config, seed=0):
    """Fit ``Id + P_ker N`` to exact-data pairs; returns ``(net, trace)``.

    ``N`` has leaky-ReLU hidden layers of the given widths and starts with a
    zero output layer, so the initial network is the identity.
    """
    n = op.in_dim
    dims = [n] + list(hidden) + [n]
    acts = ["leaky_relu"] * len(hidden) + ["identity"]
    model = nets.NullSpaceNet(zero_output_net(dims, acts, seed=seed), geometry.SvdKernelProjection(f))
    return training.train("nullspace", model, nullspace_training_set(op, f, phantoms), train_config)


@dataclass(frozen=True)
class NullspaceStudyRow:
    delta: float
    alpha: float
    filter_error: float
    nullspace_error: float


def nullspace_study(op, f, model, phantoms, filter_kind, rule, deltas, seed=0):
    spec = filters.FilterSpec(filter_kind, step=1.0 / f.s_max**2)
    alpha_of = alpha_function(rule)
    rows = []
    for k, delta in enumerate(deltas):
        alpha = float(alpha_of(delta))

        def plain(y):
            return filters.reconstruct_filtered(f, spec, alpha, y)

        e_plain = reconstruction_errors(plain, op, phantoms, delta, seed, k)
        e_null = reconstruction_errors(lambda y: model(plain(y)), op, phantoms, delta, seed, k)
        rows.append(NullspaceStudyRow(float(delta), alpha, float(e_plain.mean()), float(e_null.mean())))
    return rows


@dataclass(frozen=True)
class RateRow:
    delta: float
    alpha: float
    error: float
    bregman: float
    objective: float
    iterations: int


def rate_study(op, reg, x_true, deltas, alpha_of_delta, seed=0, config=None, oracle_starts=8):
    """NETT solutions at every noise level against the R-minimizing solution.

    ``x_true`` only defines the exact data ``y = A x_true``; the reference is
    the oracle solution ``x+`` of ``A x = y``. Returns ``(x+, rows)``.
    """
    f = linops.svd(op)
    y = op.apply(x_true)
    x_dag = variational.r_minimizing_oracle(op, reg, y, starts=oracle_starts, seed=seed, factorization=f)
    config = config or variational.SolverConfig(tol=1e-11, max_iter=50000)
    rows = []
    for k, delta in enumerate(deltas):
        y_d = add_noise(y, delta, _rng(seed, 7, k).integers(2**31))
        alpha = float(alpha_of_delta(delta))
        problem = variational.TikhonovProblem(op, y_d, alpha, reg)
        start = geometry.pseudoinverse_apply(f, y_d)
        cfg = variational.SolverConfig(
            tol=config.tol, max_iter=config.max_iter, max_halvings=config.max_halvings,
            armijo=config.armijo, initial_step=config.initial_step, x0=start,
        )
        rep = variational.nett_solve(problem, cfg)
        rows.append(
            RateRow(
                float(delta), alpha,
                float(np.linalg.norm(rep.x - x_dag)),
                variational.bregman_distance(reg, rep.x, x_dag),
                rep.objective[-1],
                rep.iterations,
            )
        )
    return x_dag, rows


def loglog_slope(xs, ys):
    """Least-squares slope of ``log ys`` against ``log xs``."""
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
