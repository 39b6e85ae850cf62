"""Empirical-risk minimization for null-space and residual networks.

The risk is ``1/N sum_i |x_i - Phi(z_i)|^2 + weight_decay * |theta|^2``. It is
minimized by full-batch (or seeded minibatch) gradient descent with momentum;
each epoch's step is halved until the full risk does not increase, so the loss
trace is non-increasing.
"""
from dataclasses import dataclass

import numpy as np

from netreg import nets
from netreg.errors import DimensionError, NumericalError

NET_KINDS = ("nullspace", "residual")


@dataclass(frozen=True)
class Dataset:
    """Pairs ``(x_i, z_i)``: desired reconstruction and network input."""

    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        zs = np.atleast_2d(np.asarray(self.zs, dtype=np.float64))
        if xs.shape[0] == 0:
            raise ValueError("dataset is empty")
        if xs.shape[0] != zs.shape[0]:
            raise DimensionError(f"{xs.shape[0]} targets but {zs.shape[0]} inputs")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)

    def __len__(self):
        return self.xs.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-6
    epochs: int = 200
    batch: int | None = None
    seed: int = 0
    max_halvings: int = 30

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be positive or None for full batch")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    risk: float
    data_term: float
    penalty_term: float

    def astuple(self):
        return (self.epoch, self.risk, self.data_term, self.penalty_term)


TRACE_COLUMNS = ("epoch", "risk", "data_term", "penalty_term")


def make_training_pairs(op, reconstructor, signals):
    """Pairs ``(x_i, reconstructor(A x_i))``."""
    xs = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    if xs.shape[0] == 0 or xs.size == 0:
        raise ValueError("no signals given")
    if xs.shape[1] != op.in_dim:
        raise DimensionError(f"signals have length {xs.shape[1]}, operator expects {op.in_dim}")
    zs = np.stack([np.asarray(reconstructor(op.apply(x)), dtype=np.float64) for x in xs])
    return Dataset(xs, zs)


def _base(net_kind, net):
    if net_kind == "nullspace":
        if not isinstance(net, nets.NullSpaceNet):
            raise TypeError("net_kind 'nullspace' needs a NullSpaceNet")
        return net.base
    if net_kind == "residual":
        return net
    raise ValueError(f"unknown net kind {net_kind!r}; expected one of {NET_KINDS}")


def _rebuild(net_kind, net, base):
    return net.with_base(base) if net_kind == "nullspace" else base


def model_forward(net_kind, net, z):
    if net_kind == "nullspace":
        return nets.nullspace_forward(net, z)
    _base(net_kind, net)
    return nets.residual_forward(net, z)


def risk_terms(net_kind, net, dataset, weight_decay):
    """``(total, data_term, penalty_term)`` of the penalized empirical risk."""
    theta = _base(net_kind, net).params()
    out = model_forward(net_kind, net, dataset.zs)
    data = float(np.sum((dataset.xs - out) ** 2)) / len(dataset)
    penalty = weight_decay * float(theta @ theta)
    return data + penalty, data, penalty


def empirical_risk(net_kind, net, dataset, weight_decay):
    return risk_terms(net_kind, net, dataset, weight_decay)[0]


def risk_gradient(net_kind, net, xs, zs, weight_decay):
    """Gradient over theta of the risk restricted to the rows ``xs, zs``."""
    base = _base(net_kind, net)
    out, cache = nets.net_forward(base, zs)
    if net_kind == "nullspace":
        phi = zs + net.projection.apply(out)
    else:
        phi = zs + out
    g = -2.0 * (xs - phi) / xs.shape[0]
    if net_kind == "nullspace":
        g = net.projection.apply(g)
    grad, _ = nets.net_backward(base, cache, g)
    return grad + 2.0 * weight_decay * base.params()


def descend(theta, loss, gradient, config, n_samples):
    """Momentum gradient descent with per-epoch step halving.

    ``loss(theta)`` returns ``(total, data, penalty)`` on the full data;
    ``gradient(theta, rows)`` returns the gradient on the selected rows
    (``rows is None`` means all). Returns ``(theta, trace)``.
    """
    rng = np.random.default_rng(config.seed)
    theta = np.array(theta, dtype=np.float64)
    velocity = np.zeros_like(theta)
    current = loss(theta)
    _check_finite(current[0], 0)
    trace = [TraceRow(0, *current)]
    for epoch in range(1, config.epochs + 1):
        if config.batch is None or config.batch >= n_samples:
            rows = None
        else:
            rows = np.sort(rng.permutation(n_samples)[: config.batch])
        grad = gradient(theta, rows)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at epoch {epoch}")
        step = config.learning_rate
        accepted = False
        for attempt in range(config.max_halvings + 1):
            mom = config.momentum if attempt == 0 else 0.0
            trial_v = mom * velocity - step * grad
            trial = theta + trial_v
            value = loss(trial)
            if np.isfinite(value[0]) and value[0] <= current[0]:
                theta, velocity, current = trial, trial_v, value
                accepted = True
                break
            step *= 0.5
        if not accepted:
            velocity = np.zeros_like(theta)
        _check_finite(current[0], epoch)
        trace.append(TraceRow(epoch, *current))
    return theta, trace


def _check_finite(value, epoch):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at epoch {epoch}")


def train(net_kind, net, dataset, config=TrainConfig()):
    """Fit the network to ``dataset``; returns ``(trained_net, trace)``."""
    base = _base(net_kind, net)

    def loss(theta):
        return risk_terms(net_kind, _rebuild(net_kind, net, base.with_params(theta)), dataset, config.weight_decay)

    def gradient(theta, rows):
        model = _rebuild(net_kind, net, base.with_params(theta))
        xs = dataset.xs if rows is None else dataset.xs[rows]
        zs = dataset.zs if rows is None else dataset.zs[rows]
        return risk_gradient(net_kind, model, xs, zs, config.weight_decay)

    theta, trace = descend(base.params(), loss, gradient, config, len(dataset))
    return _rebuild(net_kind, net, base.with_params(theta)), trace
