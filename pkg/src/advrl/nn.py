"""Dense Q-networks in plain numpy: forward pass, exact backprop, SGD/Adam.

Weights are stored as ``(out, in)`` matrices in float64.  A ``Network`` is a
list of layers; any layer type that provides ``effective()``, ``params()``,
``grads_from()`` and ``replace()`` can be used (see ``NoisyDenseLayer`` in
:mod:`advrl.exploration`).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericOverflowError, ShapeError

ACTIVATIONS = ("relu", "identity")

# A loss on the Q-vector: q -> (value, dvalue/dq)
QLoss = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} does not match weights {self.weights.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def effective(self):
        return self.weights, self.biases

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "biases": self.biases}

    def grads_from(self, g_w: np.ndarray, g_b: np.ndarray) -> dict[str, np.ndarray]:
        return {"weights": g_w, "biases": g_b}

    def replace(self, **params) -> "DenseLayer":
        new = copy.copy(self)
        for k, v in params.items():
            setattr(new, k, v)
        return new


@dataclass
class Network:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for layer in self.layers for p in layer.params().values()])


@dataclass
class GradientSet:
    """Per-layer parameter gradients, keyed like ``layer.params()``."""

    layers: list[dict[str, np.ndarray]] = field(default_factory=list)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        _check_same_shape(self, other)
        return GradientSet([{k: a[k] + b[k] for k in a} for a, b in zip(self.layers, other.layers)])

    def scale(self, c: float) -> "GradientSet":
        return GradientSet([{k: c * v for k, v in g.items()} for g in self.layers])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(v * v) for g in self.layers for v in g.values())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for g in self.layers for v in g.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for g in self.layers for v in g.values()])


def _check_same_shape(a: GradientSet, b: GradientSet):
    if len(a.layers) != len(b.layers):
        raise ShapeError("gradient sets have different layer counts")
    for ga, gb in zip(a.layers, b.layers):
        if ga.keys() != gb.keys() or any(ga[k].shape != gb[k].shape for k in ga):
            raise ShapeError("gradient sets have different shapes")


def uniform_fan_in(rng: np.random.Generator, out_dim: int, in_dim: int):
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return w, b


def mlp(sizes: list[int], rng: np.random.Generator) -> Network:
    """ReLU MLP with an identity output layer, fan-in uniform initialization."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w, b = uniform_fan_in(rng, n_out, n_in)
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(DenseLayer(w, b, act))
    return Network(layers)


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    return xb, single


def forward_batch(net: Network, xb: np.ndarray):
    """Forward a ``(batch, in)`` array; returns ``(q, cache)`` for backprop."""
    cache = []
    h = xb
    for layer in net.layers:
        w, b = layer.effective()
        z = h @ w.T + b
        cache.append((h, z, w))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def backward_batch(net: Network, cache, d_out: np.ndarray, need_input: bool = False):
    """Backprop ``d_out`` (dL/dq per row). Returns ``(GradientSet, dL/dx or None)``.

    Parameter gradients are summed over the batch.
    """
    grads = [None] * len(net.layers)
    d = d_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, z, w = cache[i]
        if layer.activation == "relu":
            d = d * (z > 0.0)
        grads[i] = layer.grads_from(d.T @ h, d.sum(axis=0))
        if i > 0 or need_input:
            d = d @ w
    return GradientSet(grads), (d if need_input else None)


def forward(net: Network, x) -> np.ndarray:
    """Q-values for one observation (1-D) or a batch (2-D)."""
    xb, single = _as_batch(net, x)
    if not np.all(np.isfinite(xb)):
        raise ShapeError("input contains non-finite entries")
    q, _ = forward_batch(net, xb)
    return q[0] if single else q


def td_gradients(net: Network, xb, actions, targets) -> tuple[float, GradientSet]:
    """Mean squared TD error over a batch and its exact gradient w.r.t. the parameters."""
    xb = np.asarray(xb, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = xb.shape[0]
    if np.any(actions < 0) or np.any(actions >= net.output_dim):
        raise ShapeError("action index out of range")
    q, cache = forward_batch(net, xb)
    resid = targets - q[np.arange(n), actions]
    d_out = np.zeros_like(q)
    d_out[np.arange(n), actions] = -2.0 * resid / n
    grads, _ = backward_batch(net, cache, d_out)
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss) or not np.isfinite(grads.norm()):
        raise NumericOverflowError("non-finite loss or gradient")
    return loss, grads


def param_gradients(net: Network, x, action: int, target: float) -> GradientSet:
    """Gradient of ``(target - Q(x, action))**2`` for a single sample."""
    xb, _ = _as_batch(net, x)
    if not np.isfinite(target):
        raise NumericOverflowError("target is not finite")
    _, grads = td_gradients(net, xb, [action], [target])
    return grads


def input_gradient(net: Network, x, loss: QLoss) -> np.ndarray:
    """Exact gradient of ``loss(forward(net, x))`` w.r.t. the input ``x``."""
    xb, _ = _as_batch(net, x)
    q, cache = forward_batch(net, xb)
    _, d_q = loss(q[0])
    _, d_x = backward_batch(net, cache, np.asarray(d_q, dtype=np.float64)[None, :], need_input=True)
    return d_x[0]


def _check_grad_shapes(net: Network, grads: GradientSet):
    if len(grads.layers) != len(net.layers):
        raise ShapeError("gradient set does not match network depth")
    for layer, g in zip(net.layers, grads.layers):
        params = layer.params()
        if params.keys() != g.keys() or any(params[k].shape != g[k].shape for k in g):
            raise ShapeError("gradient set does not match network shapes")


def apply_update(net: Network, grads: GradientSet, lr: float) -> Network:
    """Plain SGD step; returns a new network and leaves ``net`` untouched."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check_grad_shapes(net, grads)
    layers = [
        layer.replace(**{k: p - lr * g[k] for k, p in layer.params().items()})
        for layer, g in zip(net.layers, grads.layers)
    ]
    return Network(layers)


def clip_grad_norm(grads: GradientSet, max_norm: float) -> GradientSet:
    norm = grads.norm()
    if norm <= max_norm or norm == 0.0:
        return grads
    return grads.scale(max_norm / norm)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: Network, grads: GradientSet) -> Network:
        return apply_update(net, grads, self.lr)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, net: Network, grads: GradientSet) -> Network:
        _check_grad_shapes(net, grads)
        if self.m is None:
            self.m = [{k: np.zeros_like(v) for k, v in g.items()} for g in grads.layers]
            self.v = [{k: np.zeros_like(v) for k, v in g.items()} for g in grads.layers]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        steps = []
        for m, v, g in zip(self.m, self.v, grads.layers):
            step = {}
            for k, gk in g.items():
                mk, vk = m[k], v[k]
                mk *= self.beta1
                mk += (1 - self.beta1) * gk
                vk *= self.beta2
                vk += (1 - self.beta2) * (gk * gk)
                denom = np.sqrt(vk)
                denom *= 1.0 / np.sqrt(c2)
                denom += self.eps
                step[k] = mk / denom
            steps.append(step)
        return apply_update(net, GradientSet(steps), self.lr / c1)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
