"""Small feedforward networks with exact reverse-mode gradients.

Parameter vector order: layers in sequence; within a layer the weight
(row-major ``d_out x d_in`` matrix, or the circular kernel of a convolutional
layer) followed by the bias if present.

Inputs may be a single vector or a batch of row vectors; parameter gradients
are summed over the batch.
"""
from dataclasses import dataclass, field

import numpy as np

from netreg import kernels, linops
from netreg.errors import DimensionError, check_dim

ACTIVATIONS = ("relu", "leaky_relu", "identity", "tanh")


@dataclass(frozen=True)
class Layer:
    """Affine map followed by an activation.

    ``kind="dense"``: ``weight`` is a ``d_out x d_in`` matrix.
    ``kind="conv"``: ``weight`` is a circular kernel acting on length-``n``
    vectors (weight sharing); ``n`` must be given and ``d_in = d_out = n``.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "identity"
    slope: float = 0.01
    kind: str = "dense"
    n: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w = np.array(self.weight, dtype=np.float64)
        if self.kind == "dense":
            if w.ndim != 2:
                raise DimensionError("dense weight must be a matrix")
        elif self.kind == "conv":
            w = w.ravel()
            if not 1 <= w.size <= self.n:
                raise DimensionError(f"conv kernel length {w.size} must lie in [1, {self.n}]")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.array(self.bias, dtype=np.float64).ravel()
            if b.size != self.out_dim:
                raise DimensionError(f"bias length {b.size} != layer output {self.out_dim}")
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)

    @property
    def in_dim(self):
        return self.weight.shape[1] if self.kind == "dense" else self.n

    @property
    def out_dim(self):
        return self.weight.shape[0] if self.kind == "dense" else self.n

    @property
    def n_params(self):
        return self.weight.size + (0 if self.bias is None else self.bias.size)

    def linear(self, a):
        if self.kind == "dense":
            z = a @ self.weight.T
        else:
            z = kernels.circ_conv(self.weight, a)
        if self.bias is not None:
            z = z + self.bias
        return z

    def linear_adjoint(self, dz):
        if self.kind == "dense":
            return dz @ self.weight
        return kernels.circ_corr(self.weight, dz)

    def weight_grad(self, a, dz):
        if self.kind == "dense":
            return dz.T @ a
        # d/dk_j of sum_i dz_i (k * a)_i = sum_i dz_i a_{i-j}
        return np.array([np.sum(dz * np.roll(a, j, axis=-1)) for j in range(self.weight.size)])

    def spectral_norm(self):
        if self.kind == "conv":
            padded = np.zeros(self.n)
            padded[: self.weight.size] = self.weight
            return float(np.max(np.abs(np.fft.fft(padded))))
        return linops.svd(linops.DenseOperator(self.weight)).s_max


def _act(name, slope, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, slope, z):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, slope)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


@dataclass
class NetCache:
    """Intermediate values of one forward pass, consumed by :func:`net_backward`."""

    net: "FeedforwardNet"
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    shape: tuple = ()


class FeedforwardNet:
    """Layered composition ``sigma_L(W_L(... sigma_1(W_1 x) ...))``."""

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = layers

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    def params(self):
        parts = []
        for layer in self.layers:
            parts.append(layer.weight.ravel())
            if layer.bias is not None:
                parts.append(layer.bias)
        return np.concatenate(parts)

    def with_params(self, theta):
        """New network of the same architecture carrying parameters ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_params:
            raise DimensionError(f"parameter vector has {theta.size} entries, expected {self.n_params}")
        layers = []
        pos = 0
        for layer in self.layers:
            w = theta[pos : pos + layer.weight.size].reshape(layer.weight.shape)
            pos += layer.weight.size
            b = None
            if layer.bias is not None:
                b = theta[pos : pos + layer.bias.size]
                pos += layer.bias.size
            layers.append(
                Layer(w, b, layer.activation, layer.slope, layer.kind, layer.n)
            )
        return FeedforwardNet(layers)

    def __call__(self, x):
        return net_forward(self, x)[0]

    def __repr__(self):
        dims = [self.in_dim] + [layer.out_dim for layer in self.layers]
        acts = ",".join(layer.activation for layer in self.layers)
        return f"FeedforwardNet(dims={dims}, activations=[{acts}])"


def net_forward(net, x):
    """Evaluate ``net`` at ``x``; returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    check_dim(x, net.in_dim, "network input")
    cache = NetCache(net=net, shape=x.shape)
    a = x.reshape(-1, net.in_dim)
    for layer in net.layers:
        z = layer.linear(a)
        cache.inputs.append(a)
        cache.preacts.append(z)
        a = _act(layer.activation, layer.slope, z)
    return a.reshape(x.shape[:-1] + (net.out_dim,)), cache


def net_backward(net, cache, grad_output):
    """Reverse-mode gradients of ``<grad_output, net(x)>``.

    Returns ``(grad_params, grad_input)``.
    """
    if cache.net is not net:
        raise ValueError("stale cache: it was produced by a different network")
    g = np.asarray(grad_output, dtype=np.float64)
    expected = cache.shape[:-1] + (net.out_dim,)
    if g.shape != expected:
        raise DimensionError(f"grad_output shape {g.shape} != network output shape {expected}")
    g = g.reshape(-1, net.out_dim)
    grads = []
    for layer, a, z in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.preacts)):
        dz = g * _act_grad(layer.activation, layer.slope, z)
        if layer.bias is not None:
            grads.append(dz.sum(axis=0))
        grads.append(layer.weight_grad(a, dz).ravel())
        g = layer.linear_adjoint(dz)
    grads.reverse()
    return np.concatenate(grads), g.reshape(cache.shape)


def residual_forward(net, x):
    """``x + N(x)``."""
    if net.in_dim != net.out_dim:
        raise DimensionError(f"residual network needs N: R^n -> R^n, got {net.in_dim} -> {net.out_dim}")
    return np.asarray(x, dtype=np.float64) + net(x)


@dataclass(frozen=True)
class NullSpaceNet:
    """``Phi(x) = x + P_ker(A)(N(x))``; never changes ``A x``."""

    base: FeedforwardNet
    projection: object

    def __post_init__(self):
        n = self.projection.in_dim
        if self.base.in_dim != n or self.base.out_dim != n:
            raise DimensionError(
                f"base network must map R^{n} -> R^{n}, got {self.base.in_dim} -> {self.base.out_dim}"
            )

    def with_base(self, base):
        return NullSpaceNet(base, self.projection)

    def __call__(self, x):
        return nullspace_forward(self, x)


def nullspace_forward(nsnet, x):
    x = np.asarray(x, dtype=np.float64)
    return x + nsnet.projection.apply(nsnet.base(x))


def nullspace_backward(nsnet, x, grad_output):
    """Gradients of ``<grad_output, Phi(x)>``; uses that ``P_ker`` is self-adjoint."""
    _, cache = net_forward(nsnet.base, x)
    g = np.asarray(grad_output, dtype=np.float64)
    gp, gi = net_backward(nsnet.base, cache, nsnet.projection.apply(g))
    return gp, g + gi


def lipschitz_upper_bound(net):
    """Product of layer spectral norms; valid for 1-Lipschitz activations."""
    bound = 1.0
    for layer in net.layers:
        if layer.activation == "leaky_relu" and abs(layer.slope) > 1:
            raise ValueError(f"leaky ReLU slope {layer.slope} is not 1-Lipschitz")
        bound *= layer.spectral_norm()
    return bound


def nullspace_lipschitz_upper_bound(nsnet):
    """``1 + Lip(N)``, since ``|P_ker| <= 1``."""
    return 1.0 + lipschitz_upper_bound(nsnet.base)


def init_params(layer_dims, activations, seed=0, bias=True, slope=0.01):
    """Glorot-uniform weights in ``[-a, a]``, ``a = sqrt(6 / (d_in + d_out))``; zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("need at least two positive layer dims")
    if isinstance(activations, str):
        activations = [activations] * (len(dims) - 1)
    if len(activations) != len(dims) - 1:
        raise ValueError("one activation per layer required")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out, act in zip(dims[:-1], dims[1:], activations):
        a = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-a, a, size=(d_out, d_in))
        layers.append(Layer(w, np.zeros(d_out) if bias else None, act, slope))
    return FeedforwardNet(layers)


def linear_net(weight, bias=None, activation="identity"):
    """Single dense layer."""
    return FeedforwardNet([Layer(weight, bias, activation)])


def identity_net(n, bias=True):
    return linear_net(np.eye(n), np.zeros(n) if bias else None)


def zero_net(n, bias=True):
    return linear_net(np.zeros((n, n)), np.zeros(n) if bias else None)
