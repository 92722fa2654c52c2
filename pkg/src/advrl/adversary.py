"""Whitebox FGSM observation attacks and the probabilistic man-in-the-middle filter."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .nn import Network, forward_batch, input_gradient

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    probability: float = 0.2
    epsilon_adv: float = 0.004
    onset_step: int = 0
    norm: str = "inf"

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("attack probability must be in [0, 1]")
        if self.epsilon_adv <= 0:
            raise ValueError("epsilon_adv must be positive")
        if self.norm != "inf":
            raise ValueError("only the inf-norm budget is supported")

    def to_dict(self) -> dict:
        return asdict(self)


def _log_softmax(q: np.ndarray) -> np.ndarray:
    z = q - np.max(q)
    return z - np.log(np.sum(np.exp(z)))


def adversarial_loss(q) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(q) against the one-hot greedy action, and dL/dq.

    FGSM ascends this loss, pushing probability mass away from the action
    the network currently prefers.
    """
    q = np.asarray(q, dtype=np.float64)
    best = int(np.argmax(q))
    logp = _log_softmax(q)
    grad = np.exp(logp)
    grad[best] -= 1.0
    return float(-logp[best]), grad


@dataclass
class Perturbation:
    delta: np.ndarray

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.delta))) if self.delta.size else 0.0


def fgsm_perturb(net: Network, obs, cfg: AttackConfig):
    """``clip(s + eps * sign(grad_s L), 0, 1)``; returns (perturbed obs, effective delta).

    A non-finite gradient leaves the observation untouched.
    """
    obs = np.asarray(obs, dtype=np.float64)
    grad = input_gradient(net, obs, adversarial_loss)
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite input gradient; attack skipped")
        return obs.copy(), Perturbation(np.zeros_like(obs))
    adv = np.clip(obs + cfg.epsilon_adv * np.sign(grad), 0.0, 1.0)
    # rounding in s + eps can overshoot the budget by an ulp when measured as s' - s
    over = np.abs(adv - obs) > cfg.epsilon_adv
    while np.any(over):
        adv[over] = np.nextafter(adv[over], obs[over])
        over = np.abs(adv - obs) > cfg.epsilon_adv
    return adv, Perturbation(adv - obs)


@dataclass
class AttackRecord:
    step: int
    attacked: bool
    pre_action: int
    post_action: int
    delta_inf_norm: float


@dataclass
class AttackLog:
    records: list = field(default_factory=list)
    keep: bool = True
    decisions: int = 0
    attacks: int = 0
    flips: int = 0

    def add(self, rec: AttackRecord):
        self.decisions += 1
        self.attacks += rec.attacked
        self.flips += rec.attacked and rec.pre_action != rec.post_action
        if self.keep:
            self.records.append(rec)

    @property
    def attacked_fraction(self) -> float:
        return self.attacks / self.decisions if self.decisions else 0.0

    def summary(self) -> dict:
        return {
            "decisions": self.decisions,
            "attacks": self.attacks,
            "attacked_fraction": self.attacked_fraction,
            "action_flips": self.flips,
        }


class MitmFilter:
    """Observation filter that perturbs each observation with probability ``p``.

    ``net_accessor`` is called at every attacked step so the attacker always
    sees the victim's live weights. Each call consumes exactly one draw from
    ``rng`` once the onset step is reached.
    """

    def __init__(self, net_accessor: Callable[[], Network], cfg: AttackConfig,
                 rng: np.random.Generator, log: AttackLog | None = None,
                 sink: Callable[[AttackRecord], None] | None = None):
        self.net_accessor = net_accessor
        self.cfg = cfg
        self.rng = rng
        self.log = log if log is not None else AttackLog()
        self.sink = sink
        self.last_attacked = False

    def __call__(self, obs: np.ndarray, step: int) -> np.ndarray:
        self.last_attacked = False
        if step < self.cfg.onset_step:
            return obs
        hit = self.rng.random() < self.cfg.probability
        net = self.net_accessor()
        if hit:
            adv, pert = fgsm_perturb(net, obs, self.cfg)
            q, _ = forward_batch(net, np.stack([obs, adv]))
            rec = AttackRecord(step, True, int(np.argmax(q[0])), int(np.argmax(q[1])), pert.inf_norm)
            self.last_attacked = True
            out = adv
        else:
            q, _ = forward_batch(net, obs[None, :])
            a = int(np.argmax(q[0]))
            rec = AttackRecord(step, False, a, a, 0.0)
            out = obs
        self.log.add(rec)
        if self.sink is not None:
            self.sink(rec)
        return out


def mitm_filter(net_accessor, cfg: AttackConfig, rng, **kwargs) -> MitmFilter:
    return MitmFilter(net_accessor, cfg, rng, **kwargs)
