"""Exploration: annealed epsilon-greedy and factorized-Gaussian noisy layers."""
from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, ShapeError
from .nn import ACTIVATIONS, Network, mlp


def signed_sqrt(x):
    """The scaling ``f(x) = sign(x) * sqrt(|x|)`` applied to factorized noise."""
    return np.sign(x) * np.sqrt(np.abs(x))


def sample_factorized_noise(in_dim: int, out_dim: int, rng: np.random.Generator):
    """Rank-one weight noise ``f(e_out) f(e_in)^T`` and bias noise ``f(e_out)``."""
    eps_in = signed_sqrt(rng.standard_normal(in_dim))
    eps_out = signed_sqrt(rng.standard_normal(out_dim))
    return np.outer(eps_out, eps_in), eps_out


@dataclass
class NoisyDenseLayer:
    mu_weights: np.ndarray
    sigma_weights: np.ndarray
    mu_bias: np.ndarray
    sigma_bias: np.ndarray
    activation: str = "relu"
    noise: tuple | None = None
    train_sigma: bool = True

    def __post_init__(self):
        for name in ("mu_weights", "sigma_weights", "mu_bias", "sigma_bias"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.mu_weights.ndim != 2 or self.sigma_weights.shape != self.mu_weights.shape:
            raise ShapeError("mu and sigma weight shapes differ")
        if self.mu_bias.shape != (self.mu_weights.shape[0],) or self.sigma_bias.shape != self.mu_bias.shape:
            raise ShapeError("bias shapes do not match weights")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.mu_weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.mu_weights.shape[0]

    def effective(self):
        if self.noise is None:
            raise ProtocolError("noisy layer has no noise sample; call resample_noise first")
        eps_w, eps_b = self.noise
        return self.mu_weights + self.sigma_weights * eps_w, self.mu_bias + self.sigma_bias * eps_b

    def params(self) -> dict[str, np.ndarray]:
        return {
            "mu_weights": self.mu_weights,
            "sigma_weights": self.sigma_weights,
            "mu_bias": self.mu_bias,
            "sigma_bias": self.sigma_bias,
        }

    def grads_from(self, g_w, g_b):
        eps_w, eps_b = self.noise
        if self.train_sigma:
            g_sw, g_sb = g_w * eps_w, g_b * eps_b
        else:
            g_sw, g_sb = np.zeros_like(g_w), np.zeros_like(g_b)
        return {"mu_weights": g_w, "sigma_weights": g_sw, "mu_bias": g_b, "sigma_bias": g_sb}

    def replace(self, **params) -> "NoisyDenseLayer":
        new = copy.copy(self)
        for k, v in params.items():
            setattr(new, k, v)
        return new

    def resample(self, rng: np.random.Generator):
        self.noise = sample_factorized_noise(self.in_dim, self.out_dim, rng)


def effective_parameters(layer: NoisyDenseLayer):
    return layer.effective()


def noisy_mlp(sizes: list[int], rng: np.random.Generator, sigma_scale: float = 0.5,
              train_sigma: bool = True) -> Network:
    """Noisy counterpart of :func:`advrl.nn.mlp`.

    ``mu`` consumes the init stream exactly like ``mlp`` does, so a noisy net
    with zero sigma starts from the same weights as its plain twin.
    """
    plain = mlp(sizes, rng)
    layers = []
    for layer in plain.layers:
        s = sigma_scale / np.sqrt(layer.in_dim)
        layers.append(NoisyDenseLayer(
            mu_weights=layer.weights,
            sigma_weights=np.full_like(layer.weights, s),
            mu_bias=layer.biases,
            sigma_bias=np.full_like(layer.biases, s),
            activation=layer.activation,
            train_sigma=train_sigma,
        ))
    return Network(layers)


def is_noisy(net: Network) -> bool:
    return any(isinstance(layer, NoisyDenseLayer) for layer in net.layers)


def resample_noise(net: Network, rng: np.random.Generator) -> Network:
    """Draw fresh noise for every noisy layer, in place. Returns ``net``."""
    noisy = [layer for layer in net.layers if isinstance(layer, NoisyDenseLayer)]
    if not noisy:
        warnings.warn("resample_noise called on a network without noisy layers", stacklevel=2)
    for layer in noisy:
        layer.resample(rng)
    return net


def get_noise(net: Network) -> list:
    """Current noise samples of every noisy layer (None for plain layers)."""
    return [getattr(layer, "noise", None) for layer in net.layers]


def set_noise(net: Network, samples: list) -> Network:
    for layer, sample in zip(net.layers, samples):
        if isinstance(layer, NoisyDenseLayer):
            layer.noise = sample
    return net


def mean_network(net: Network) -> Network:
    """Copy of ``net`` with every noisy layer pinned to its mean (noise = 0)."""
    out = net.copy()
    for layer in out.layers:
        if isinstance(layer, NoisyDenseLayer):
            layer.noise = (np.zeros_like(layer.mu_weights), np.zeros_like(layer.mu_bias))
    return out


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.02
    anneal_steps: int = 5000

    def __post_init__(self):
        if not (0.0 <= self.end <= self.start <= 1.0):
            raise ValueError("need 0 <= end <= start <= 1")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")

    def value(self, step: int) -> float:
        if step >= self.anneal_steps:
            return self.end
        frac = max(step, 0) / self.anneal_steps
        return self.start + frac * (self.end - self.start)


def greedy(q) -> int:
    # np.argmax returns the first maximum, i.e. lowest-index tie-break
    return int(np.argmax(q))


def epsilon_greedy_action(q, step: int, sched: EpsilonSchedule, rng: np.random.Generator) -> int:
    q = np.asarray(q)
    if q.size == 0:
        raise ShapeError("empty Q-vector")
    # always consume exactly one draw for the coin so streams stay aligned
    if rng.random() < sched.value(step):
        return int(rng.integers(q.size))
    return greedy(q)
