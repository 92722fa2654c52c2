"""Vanilla DQN: replay memory, target network, clipped rewards, training loop.

The training loop accepts an optional observation filter, a callable
``filter(obs, step) -> obs`` sitting between environment and agent.  That is
where the man-in-the-middle adversary plugs in.  A filter may expose a
boolean ``last_attacked`` attribute describing its most recent decision.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .envs import EnvSpec, Transition, make_env
from .exploration import (EpsilonSchedule, epsilon_greedy_action, get_noise, greedy, is_noisy,
                          mean_network, noisy_mlp, resample_noise, set_noise)
from .nn import Network, clip_grad_norm, forward, make_optimizer, mlp, td_gradients

log = logging.getLogger(__name__)

EXPLORATION_VARIANTS = ("epsilon-greedy", "noisy-net")

ObservationFilter = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class AgentConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 10_000
    target_sync_interval: int = 500
    train_start: int = 500
    train_frequency: int = 1
    total_steps: int = 50_000
    exploration: str = "epsilon-greedy"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.02
    epsilon_anneal_fraction: float = 0.1
    hidden: tuple = (64, 64)
    optimizer: str = "adam"
    grad_clip: Optional[float] = None
    sigma_init: float = 0.5
    train_sigma: bool = True
    noisy_eval: str = "resample"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.target_sync_interval < 1 or self.train_frequency < 1:
            raise ValueError("target_sync_interval and train_frequency must be >= 1")
        if self.exploration not in EXPLORATION_VARIANTS:
            raise ValueError(f"exploration must be one of {EXPLORATION_VARIANTS}")
        if self.noisy_eval not in ("resample", "mean"):
            raise ValueError("noisy_eval must be 'resample' or 'mean'")

    @property
    def schedule(self) -> EpsilonSchedule:
        steps = max(1, int(round(self.epsilon_anneal_fraction * self.total_steps)))
        return EpsilonSchedule(self.epsilon_start, self.epsilon_end, steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def clip_reward(r: float) -> float:
    return float(min(1.0, max(-1.0, r)))


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.next_states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition):
        i = self.cursor
        self.states[i] = t.state
        self.next_states[i] = t.next_state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminals[i] = t.terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator):
        idx = self.sample_indices(n, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])

    def contents(self) -> list[Transition]:
        """Transitions oldest-first."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                           self.next_states[i].copy(), bool(self.terminals[i])) for i in order]


@dataclass
class LearningCurve:
    episodes: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    attacked_fraction: list = field(default_factory=list)

    def append(self, ret: float, step: int, attacked_fraction: float = 0.0):
        self.episodes.append(len(self.episodes))
        self.returns.append(float(ret))
        self.steps.append(int(step))
        self.attacked_fraction.append(float(attacked_fraction))

    def __len__(self):
        return len(self.returns)

    def __eq__(self, other):
        return isinstance(other, LearningCurve) and (
            self.episodes, self.returns, self.steps, self.attacked_fraction) == (
            other.episodes, other.returns, other.steps, other.attacked_fraction)


def build_network(cfg: AgentConfig, env: EnvSpec, rng: np.random.Generator) -> Network:
    sizes = [env.obs_dim, *cfg.hidden, env.action_count]
    if cfg.exploration == "noisy-net":
        return noisy_mlp(sizes, rng, cfg.sigma_init, cfg.train_sigma)
    return mlp(sizes, rng)


def compute_targets(rewards, next_q, terminals, gamma: float) -> np.ndarray:
    """Bootstrap targets ``r + gamma * max_a' Q_target(s', a')``, cut at terminals."""
    rewards = np.clip(np.asarray(rewards, dtype=np.float64), -1.0, 1.0)
    boot = np.where(np.asarray(terminals, dtype=bool), 0.0, np.max(next_q, axis=-1))
    return rewards + gamma * boot


def compute_target(transition: Transition, target_net: Network, gamma: float) -> float:
    if transition.terminal:
        return clip_reward(transition.reward)
    q_next = forward(target_net, transition.next_state)
    return float(compute_targets([transition.reward], q_next[None, :], [False], gamma)[0])


class Agent:
    """Online and target networks, replay memory, optimizer and step counter."""

    def __init__(self, cfg: AgentConfig, env: EnvSpec, seed: int):
        self.cfg = cfg
        self.env_spec = env
        self.seed = seed
        self.rngs = rngmod.streams(seed)
        self.online = build_network(cfg, env, self.rngs["init"])
        if is_noisy(self.online):
            resample_noise(self.online, self.rngs["exploration"])
        self.target = self.online.copy()
        self.buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_dim)
        self.optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
        self.step = 0
        self.updates = 0
        self.losses: list[float] = []
        self.epsilon_floor_only = False

    @property
    def noisy(self) -> bool:
        return is_noisy(self.online)

    def epsilon(self) -> float:
        if self.epsilon_floor_only:
            return self.cfg.epsilon_end
        return self.cfg.schedule.value(self.step)

    def select_action(self, obs: np.ndarray) -> int:
        if self.noisy:
            # the sample for the next decision is drawn right away, so anything
            # inspecting the online net in between (the attacker) sees the
            # parameters that will actually act
            a = greedy(forward(self.online, obs))
            resample_noise(self.online, self.rngs["exploration"])
            return a
        q = forward(self.online, obs)
        sched = self.cfg.schedule
        if self.epsilon_floor_only:
            sched = EpsilonSchedule(sched.end, sched.end, 1)
        return epsilon_greedy_action(q, self.step, sched, self.rngs["exploration"])

    def sync_target(self):
        if [type(l) for l in self.target.layers] != [type(l) for l in self.online.layers]:
            raise AssertionError("online and target architectures differ")
        self.target = self.online.copy()

    def train_step(self) -> Optional[float]:
        """One optimization step on a uniform replay batch; ``None`` if skipped."""
        cfg = self.cfg
        if len(self.buffer) < cfg.batch_size or self.step < cfg.train_start:
            return None
        s, a, r, s2, term = self.buffer.sample(cfg.batch_size, self.rngs["replay"])
        acting = None
        if self.noisy:
            # independent samples for online and target, each held for the batch
            acting = get_noise(self.online)
            resample_noise(self.online, self.rngs["exploration"])
            resample_noise(self.target, self.rngs["exploration"])
        next_q = forward(self.target, s2)
        y = compute_targets(r, next_q, term, cfg.gamma)
        loss, grads = td_gradients(self.online, s, a, y)
        if cfg.grad_clip is not None:
            grads = clip_grad_norm(grads, cfg.grad_clip)
        self.online = self.optimizer.step(self.online, grads)
        if acting is not None:
            set_noise(self.online, acting)
        self.updates += 1
        self.losses.append(loss)
        return loss


def sync_target(agent: Agent) -> Agent:
    agent.sync_target()
    return agent


def train_step(agent: Agent, cfg: AgentConfig | None = None) -> Optional[float]:
    return agent.train_step()


def select_action(agent: Agent, obs: np.ndarray, cfg: AgentConfig | None = None) -> int:
    return agent.select_action(obs)


class Trainer:
    """Runs the interaction loop for one agent; resumable at episode boundaries."""

    def __init__(self, cfg: AgentConfig, env: EnvSpec, seed: int):
        self.agent = Agent(cfg, env, seed)
        self.env = make_env(env, self.agent.rngs["env"])
        self.curve = LearningCurve()
        self.episode_callbacks: list[Callable] = []

    @property
    def online(self) -> Network:
        return self.agent.online

    def run(self, n_steps: int, obs_filter: ObservationFilter | None = None,
            until: Callable[["Trainer"], bool] | None = None) -> bool:
        """Train for up to ``n_steps`` env steps, finishing the episode in progress.

        Stops early (returning True) when ``until(trainer)`` holds after a
        completed episode.
        """
        agent, cfg = self.agent, self.agent.cfg
        stop_at = agent.step + n_steps
        filt = obs_filter or _identity_filter
        while agent.step < stop_at:
            obs = filt(self.env.reset(), agent.step)
            attacked = int(getattr(filt, "last_attacked", False))
            looks = 1
            ret = 0.0
            done = False
            while not done:
                a = agent.select_action(obs)
                raw_next, r, done = self.env.step(a)
                agent.step += 1
                ret += r
                nxt = filt(raw_next, agent.step)
                attacked += int(getattr(filt, "last_attacked", False))
                looks += 1
                agent.buffer.add(Transition(obs, a, clip_reward(r), nxt, done))
                obs = nxt
                if agent.step % cfg.train_frequency == 0:
                    agent.train_step()
                if agent.step % cfg.target_sync_interval == 0:
                    agent.sync_target()
            self.curve.append(ret, agent.step, attacked / looks)
            for cb in self.episode_callbacks:
                cb(self)
            if until is not None and until(self):
                return True
        return False


def _identity_filter(obs, step):
    return obs


def run_training(cfg: AgentConfig, env: EnvSpec, obs_filter: ObservationFilter | None = None,
                 seed: int = 0) -> tuple[Agent, LearningCurve]:
    trainer = Trainer(cfg, env, seed)
    trainer.run(cfg.total_steps, obs_filter)
    return trainer.agent, trainer.curve


def policy_network(net: Network, cfg: AgentConfig) -> Network:
    """Network used for evaluation rollouts under the configured noisy-eval rule."""
    if is_noisy(net) and cfg.noisy_eval == "mean":
        return mean_network(net)
    return net
