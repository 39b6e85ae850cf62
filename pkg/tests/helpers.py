"""Seeded operator and network fixtures shared by the test modules."""
import numpy as np

from netreg import linops, nets

OPERATOR_KINDS = ("dense", "conv", "masked", "composed")


def random_operator(kind, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    if kind == "dense":
        m = int(rng.integers(2, 13))
        return linops.DenseOperator(rng.standard_normal((m, n)))
    if kind == "conv":
        return linops.CircularConvolution(rng.standard_normal(int(rng.integers(1, n + 1))), n)
    if kind == "masked":
        k = int(rng.integers(1, n + 1))
        return linops.MaskedSampling(np.sort(rng.choice(n, size=k, replace=False)), n)
    if kind == "composed":
        k = int(rng.integers(1, n + 1))
        S = linops.MaskedSampling(np.sort(rng.choice(n, size=k, replace=False)), n)
        return S @ linops.CircularConvolution(rng.standard_normal(3), n)
    raise ValueError(kind)


def rank_deficient_operator(seed, m=6, n=10, rank=4):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    return linops.DenseOperator(M)


def random_net(dims, activations, seed, bias=True, scale=1.0):
    net = nets.init_params(dims, activations, seed=seed, bias=bias)
    rng = np.random.default_rng(seed + 1)
    theta = net.params() * scale
    # non-zero biases so bias gradients are exercised
    return net.with_params(theta + 0.1 * rng.standard_normal(theta.size) * (np.abs(theta) == 0))


def central_difference(fun, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g.reshape(x.shape)


def relative_error(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))
