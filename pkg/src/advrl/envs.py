"""Toy pixel environments: grid-catch and mini-pong.

Both render binary frames (0 background, 1 for ball/object and paddle) and
expose a stack of the most recent ``frame_stack`` frames, oldest first,
flattened into one vector.
"""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NotAvailableError, ProtocolError

ENV_NAMES = ("grid-catch", "mini-pong")

# paddle displacement per action, keyed by action count
_MOVES = {1: (0,), 2: (-1, 1), 3: (-1, 0, 1)}


@dataclass(frozen=True)
class EnvSpec:
    name: str = "grid-catch"
    grid_height: int = 10
    grid_width: int = 10
    action_count: int = 3
    max_episode_steps: int = 200
    frame_stack: int = 4

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}")
        if self.grid_height < 2 or self.grid_width < 2:
            raise ValueError("grid must be at least 2x2")
        if self.action_count not in _MOVES:
            raise ValueError(f"action_count must be one of {sorted(_MOVES)}")
        if self.frame_stack < 1:
            raise ValueError("frame_stack must be >= 1")
        if self.max_episode_steps < 0:
            raise ValueError("max_episode_steps must be >= 0")

    @property
    def obs_dim(self) -> int:
        return self.frame_stack * self.grid_height * self.grid_width

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnvState:
    ball_row: int
    ball_col: int
    paddle: int
    ball_drow: int = 0
    ball_dcol: int = 0
    steps: int = 0
    done: bool = False


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class _PixelEnv:
    def __init__(self, spec: EnvSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.state: EnvState | None = None
        self._frames: deque = deque(maxlen=spec.frame_stack)
        self._moves = _MOVES[spec.action_count]

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    def observation(self) -> np.ndarray:
        return np.concatenate([f.ravel() for f in self._frames])

    def reset(self) -> np.ndarray:
        if self.spec.max_episode_steps < 1:
            raise ProtocolError("max_episode_steps must be >= 1 to run an episode")
        self.state = self._spawn()
        frame = self.render()
        self._frames.clear()
        for _ in range(self.spec.frame_stack):
            self._frames.append(frame)
        return self.observation()

    def step(self, action: int):
        """Advance one tick. Returns ``(observation, reward, terminal)``."""
        if self.state is None or self.state.done:
            raise ProtocolError("step() called on a finished or unstarted episode")
        if not 0 <= action < self.spec.action_count:
            raise ValueError(f"invalid action {action}")
        reward, terminal = self._advance(self.state, action)
        self.state.steps += 1
        if self.state.steps >= self.spec.max_episode_steps:
            terminal = True
        self.state.done = terminal
        self._frames.append(self.render())
        return self.observation(), reward, terminal

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def _spawn(self) -> EnvState:
        raise NotImplementedError

    def _advance(self, s: EnvState, action: int):
        raise NotImplementedError


class GridCatch(_PixelEnv):
    """An object falls one row per step; a one-cell paddle on the bottom row
    moves left/stay/right. +1 for a catch, -1 for a miss, then terminal."""

    def _spawn(self) -> EnvState:
        w = self.spec.grid_width
        col = int(self.rng.integers(w))
        paddle = int(self.rng.integers(w))
        return EnvState(ball_row=0, ball_col=col, paddle=paddle)

    def _advance(self, s: EnvState, action: int):
        s.paddle = min(max(s.paddle + self._moves[action], 0), self.spec.grid_width - 1)
        s.ball_row += 1
        if s.ball_row >= self.spec.grid_height - 1:
            return (1.0 if s.ball_col == s.paddle else -1.0), True
        return 0.0, False

    def render(self) -> np.ndarray:
        h, w = self.spec.grid_height, self.spec.grid_width
        frame = np.zeros((h, w))
        frame[self.state.ball_row, self.state.ball_col] = 1.0
        frame[h - 1, self.state.paddle] = 1.0
        return frame


class MiniPong(_PixelEnv):
    """Ball bounces off top, bottom and left walls; a one-cell paddle on the
    right column moves up/stay/down. A return scores +1 and play continues,
    a miss scores -1 and ends the episode."""

    def _spawn(self) -> EnvState:
        h = self.spec.grid_height
        row = int(self.rng.integers(h))
        drow = 1 if self.rng.random() < 0.5 else -1
        return EnvState(ball_row=row, ball_col=0, paddle=h // 2, ball_drow=drow, ball_dcol=1)

    def _advance(self, s: EnvState, action: int):
        return pong_advance(s, action, self.spec)

    def render(self) -> np.ndarray:
        h, w = self.spec.grid_height, self.spec.grid_width
        frame = np.zeros((h, w))
        frame[self.state.ball_row, self.state.ball_col] = 1.0
        frame[self.state.paddle, w - 1] = 1.0
        return frame


def pong_advance(s: EnvState, action: int, spec: EnvSpec):
    h, w = spec.grid_height, spec.grid_width
    s.paddle = min(max(s.paddle + _MOVES[spec.action_count][action], 0), h - 1)
    if not 0 <= s.ball_row + s.ball_drow < h:
        s.ball_drow = -s.ball_drow
    s.ball_row += s.ball_drow
    if s.ball_col + s.ball_dcol < 0:
        s.ball_dcol = -s.ball_dcol
    if s.ball_col + s.ball_dcol >= w - 1:
        # ball enters the paddle column
        if s.ball_row == s.paddle:
            s.ball_dcol = -1
            s.ball_col = w - 2
            return 1.0, False
        s.ball_col = w - 1
        return -1.0, True
    s.ball_col += s.ball_dcol
    return 0.0, False


def make_env(spec: EnvSpec, rng: np.random.Generator) -> _PixelEnv:
    return {"grid-catch": GridCatch, "mini-pong": MiniPong}[spec.name](spec, rng)


def greedy_catch_action(state: EnvState, spec: EnvSpec) -> int:
    """Hand-coded optimal grid-catch policy: step toward the object's column."""
    moves = _MOVES[spec.action_count]
    want = int(np.sign(state.ball_col - state.paddle))
    return moves.index(want) if want in moves else moves.index(min(moves, key=lambda m: abs(m - want)))


def _catch_best(spec: EnvSpec, col: int, paddle: int) -> float:
    # exhaustive: which paddle columns are reachable when the object lands
    moves = _MOVES[spec.action_count]
    w = spec.grid_width
    fall = spec.grid_height - 1
    if spec.max_episode_steps < fall:
        return 0.0
    reach = {paddle}
    for _ in range(fall):
        reach = {min(max(p + m, 0), w - 1) for p in reach for m in moves}
    return 1.0 if col in reach else -1.0


def _pong_best(spec: EnvSpec, start: EnvState) -> float:
    # layered BFS over (ball, paddle) with the best return so far per state
    layer = {_pong_key(start): (start, 0.0)}
    best_final = -np.inf
    for _ in range(spec.max_episode_steps):
        nxt: dict = {}
        for s, ret in layer.values():
            for a in range(spec.action_count):
                t = EnvState(**{**s.__dict__})
                r, term = pong_advance(t, a, spec)
                if term:
                    best_final = max(best_final, ret + r)
                    continue
                k = _pong_key(t)
                if k not in nxt or nxt[k][1] < ret + r:
                    nxt[k] = (t, ret + r)
        layer = nxt
        if not layer:
            break
    if layer:
        best_final = max(best_final, max(ret for _, ret in layer.values()))
    return float(best_final) if np.isfinite(best_final) else 0.0


def _pong_key(s: EnvState):
    return (s.ball_row, s.ball_col, s.ball_drow, s.ball_dcol, s.paddle)


def optimal_return(spec: EnvSpec) -> float:
    """Expected undiscounted return of the optimal policy over the spawn distribution."""
    if spec.max_episode_steps == 0:
        return 0.0
    w, h = spec.grid_width, spec.grid_height
    if spec.name == "grid-catch":
        vals = [_catch_best(spec, c, p) for c in range(w) for p in range(w)]
        return float(np.mean(vals))
    if spec.name == "mini-pong":
        vals = [
            _pong_best(spec, EnvState(ball_row=r, ball_col=0, paddle=h // 2, ball_drow=d, ball_dcol=1))
            for r in range(h) for d in (1, -1)
        ]
        return float(np.mean(vals))
    raise NotAvailableError(f"no optimal-return oracle for {spec.name!r}")
