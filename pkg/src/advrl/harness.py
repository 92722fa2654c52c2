"""Experiment protocols: clean pretraining to convergence, attacked training,
clean and attacked evaluation, and learning-curve analysis."""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .adversary import AttackConfig, AttackLog, MitmFilter
from .agent import AgentConfig, LearningCurve, Trainer, policy_network
from .checkpoint import Checkpoint, save_checkpoint
from .csvio import ATTACK_FIELDS, EPISODE_FIELDS, EVAL_FIELDS, CsvAppender, EpisodeWriter, merge
from .envs import EnvSpec, make_env, optimal_return
from .exploration import greedy, is_noisy, resample_noise
from .nn import Network, forward

log = logging.getLogger(__name__)

PHASES = ("pretrain-to-convergence", "attacked-training", "clean-eval", "attacked-eval")


def rolling_mean(returns, window: int = 100) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    r = np.asarray(getattr(returns, "returns", returns), dtype=np.float64)
    if r.size == 0:
        return np.zeros(0)
    c = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(r.size)
    lo = np.maximum(0, idx - window + 1)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)


def check_convergence(rolling, optimal: float, window: int = 100,
                      level: float = 0.9, max_drop: float = 0.05) -> bool:
    """Rolling mean at >= ``level`` of optimal and no drawdown larger than
    ``max_drop * |optimal|`` within the last ``window`` values."""
    rolling = np.asarray(rolling, dtype=np.float64)
    if rolling.size < window:
        return False
    if rolling[-1] < level * optimal:
        return False
    tail = rolling[-window:]
    drawdown = np.max(np.maximum.accumulate(tail) - tail)
    return bool(drawdown <= max_drop * abs(optimal))


@dataclass
class PhaseTransition:
    min_episode: int
    min_value: float
    pre_onset: float
    recovered: bool
    recovery_episode: Optional[int]


def detect_phase_transition(rolling, onset: int, window: int = 100,
                            recovery_level: float = 0.8) -> Optional[PhaseTransition]:
    """Earliest global minimum of the rolling mean at/after ``onset`` and whether
    the curve later climbs back to ``recovery_level`` of its level at onset.

    Returns None when fewer than ``window`` episodes follow the onset.
    """
    rolling = np.asarray(rolling, dtype=np.float64)
    if not 0 <= onset < rolling.size or rolling.size - onset - 1 < window:
        return None
    pre = float(rolling[onset])
    post = rolling[onset:]
    i_min = int(np.argmin(post))
    after = np.nonzero(post[i_min + 1:] >= recovery_level * pre)[0]
    rec_ep = onset + i_min + 1 + int(after[0]) if after.size else None
    return PhaseTransition(onset + i_min, float(post[i_min]), pre, rec_ep is not None, rec_ep)


@dataclass
class CurveStats:
    rolling: np.ndarray
    window: int
    onset_episode: Optional[int]
    transition: Optional[PhaseTransition]

    @property
    def recovered(self) -> bool:
        return bool(self.transition and self.transition.recovered)


@dataclass
class ExperimentPlan:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seeds: tuple = (0, 1, 2)
    phases: tuple = PHASES
    eval_episodes: int = 100
    window: int = 100
    post_onset_factor: float = 3.0
    test_probability: float = 1.0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        bad = set(self.phases) - set(PHASES)
        if bad:
            raise ValueError(f"unknown phases {sorted(bad)}")
        if "attacked-training" in self.phases and "pretrain-to-convergence" not in self.phases:
            raise ValueError("attacked-training requires the pretrain-to-convergence phase")

    @property
    def variant(self) -> str:
        return self.agent.exploration

    def run_id(self, seed: int, p: Optional[float] = None) -> str:
        p = self.attack.probability if p is None else p
        return f"{self.env.name}-{self.variant}-p{p:g}-s{seed}"


@dataclass
class RunRecord:
    run_id: str
    seed: int
    variant: str
    probability: float
    status: str
    curve: LearningCurve
    pretrain_steps: int = 0
    onset_episode: Optional[int] = None
    stats: Optional[CurveStats] = None
    attack_summary: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    checkpoint_paths: dict = field(default_factory=dict)
    evals: dict = field(default_factory=dict)


# ---------------------------------------------------------------- evaluation

def rollout(policy: Callable, env: EnvSpec, episodes: int, seed: int,
            obs_filter=None) -> np.ndarray:
    """Raw returns of ``policy(obs, env_obj) -> action`` over ``episodes`` episodes."""
    e = make_env(env, rngmod.stream(seed, "eval"))
    rets = np.zeros(episodes)
    step = 0
    for k in range(episodes):
        obs = e.reset()
        if obs_filter is not None:
            obs = obs_filter(obs, step)
        done, ret = False, 0.0
        while not done:
            obs, r, done = e.step(policy(obs, e))
            step += 1
            ret += r
            if obs_filter is not None:
                obs = obs_filter(obs, step)
        rets[k] = ret
    return rets


def evaluate_policy(checkpoint: Checkpoint | Network, env: EnvSpec,
                    attack: Optional[AttackConfig], episodes: int = 100, seed: int = 0,
                    noisy_eval: str = "resample") -> tuple[float, float]:
    """Greedy rollouts of a checkpoint, optionally under the MITM attack. No learning.

    The checkpoint is never modified; noisy networks are evaluated on a copy.
    """
    if isinstance(checkpoint, Checkpoint):
        if checkpoint.env != env:
            from .errors import CheckpointError
            raise CheckpointError(f"checkpoint env {checkpoint.env} does not match {env}")
        net = checkpoint.network
    else:
        net = checkpoint
    if net.input_dim != env.obs_dim or net.output_dim != env.action_count:
        from .errors import CheckpointError
        raise CheckpointError("network shape does not match the environment")
    net = net.copy()
    noisy = is_noisy(net)
    if noisy:
        net = policy_network(net, replace(AgentConfig(), noisy_eval=noisy_eval))
    noise_rng = rngmod.stream(seed, "exploration")
    if noisy and noisy_eval == "resample":
        resample_noise(net, noise_rng)

    def policy(obs, _env):
        a = greedy(forward(net, obs))
        if noisy and noisy_eval == "resample":
            # next decision's sample, visible to the attack filter before acting
            resample_noise(net, noise_rng)
        return a

    filt = None
    if attack is not None:
        filt = MitmFilter(lambda: net, replace(attack, onset_step=0), rngmod.stream(seed, "attack"),
                          log=AttackLog(keep=False))
    rets = rollout(policy, env, episodes, seed, filt)
    return float(rets.mean()), float(rets.std())


# ---------------------------------------------------------------- training protocol

def _convergence_check(plan: ExperimentPlan, optimal: float):
    w = plan.window

    def done(trainer: Trainer) -> bool:
        r = trainer.curve.returns
        if len(r) < w:
            return False
        return check_convergence(rolling_mean(r[-2 * w:], w), optimal, w)

    return done


class _RunFiles:
    def __init__(self, run_dir: Path, run_id: str, seed: int, window: int):
        self.dir = run_dir
        self.episodes = EpisodeWriter(run_dir / "episodes.csv", run_id, seed, window)
        self.attacks = CsvAppender(run_dir / "attacks.csv", ATTACK_FIELDS)
        self.evals = CsvAppender(run_dir / "evals.csv", EVAL_FIELDS)
        self.run_id = run_id

    def close(self):
        for f in (self.episodes, self.attacks, self.evals):
            f.close()


def pretrain(plan: ExperimentPlan, seed: int) -> tuple[Trainer, bool]:
    """Clean training until the convergence check fires (or the budget runs out)."""
    trainer = Trainer(plan.agent, plan.env, seed)
    optimal = optimal_return(plan.env)
    converged = trainer.run(plan.agent.total_steps, until=_convergence_check(plan, optimal))
    log.info("seed %d %s: pretrain %s after %d steps", seed, plan.variant,
             "converged" if converged else "did not converge", trainer.agent.step)
    return trainer, converged


def attack_phase(trainer: Trainer, plan: ExperimentPlan, seed: int,
                 probability: float, out_dir: Optional[Path] = None) -> RunRecord:
    """Continue a converged trainer under the MITM filter, then evaluate."""
    agent = trainer.agent
    run_id = plan.run_id(seed, probability)
    files = None
    if out_dir is not None:
        files = _RunFiles(Path(out_dir) / "runs" / run_id, run_id, seed, plan.window)
        c = trainer.curve
        for ep, st, rt, af in zip(c.episodes, c.steps, c.returns, c.attacked_fraction):
            files.episodes.episode(ep, st, rt, af)
        trainer.episode_callbacks.append(lambda t: files.episodes.episode(
            t.curve.episodes[-1], t.curve.steps[-1], t.curve.returns[-1], t.curve.attacked_fraction[-1]))

    pretrain_steps = agent.step
    onset_episode = len(trainer.curve) - 1
    clean = Checkpoint(agent.online.copy(), plan.env, plan.variant, agent.step)
    record = RunRecord(run_id, seed, plan.variant, probability, "ok", trainer.curve,
                       pretrain_steps=pretrain_steps, onset_episode=onset_episode)
    record.checkpoints["clean"] = clean

    if "attacked-training" in plan.phases:
        atk = replace(plan.attack, probability=probability, onset_step=agent.step)
        sink = None
        if files is not None:
            sink = lambda r: files.attacks.write(run_id, r.step, r.attacked, r.pre_action,
                                                 r.post_action, r.delta_inf_norm)
        filt = MitmFilter(lambda: trainer.agent.online, atk, rngmod.stream(seed, "attack"),
                          log=AttackLog(keep=False), sink=sink)
        agent.epsilon_floor_only = True
        budget = int(min(plan.post_onset_factor * pretrain_steps, plan.agent.total_steps))
        trainer.run(budget, filt)
        record.attack_summary = filt.log.summary()
        record.checkpoints["adv-trained"] = Checkpoint(agent.online.copy(), plan.env,
                                                       plan.variant, agent.step)

    roll = rolling_mean(trainer.curve.returns, plan.window)
    record.stats = CurveStats(roll, plan.window, onset_episode,
                              detect_phase_transition(roll, onset_episode, plan.window))

    test_attack = replace(plan.attack, probability=plan.test_probability, onset_step=0)
    for name, ckpt in record.checkpoints.items():
        if "clean-eval" in plan.phases:
            record.evals[(name, "clean")] = evaluate_policy(
                ckpt, plan.env, None, plan.eval_episodes, seed, plan.agent.noisy_eval)
        if "attacked-eval" in plan.phases:
            record.evals[(name, "attacked")] = evaluate_policy(
                ckpt, plan.env, test_attack, plan.eval_episodes, seed, plan.agent.noisy_eval)

    if files is not None:
        for name, ckpt in record.checkpoints.items():
            record.checkpoint_paths[name] = save_checkpoint(ckpt, files.dir / f"{name}.ckpt")
        for (name, cond), (m, s) in record.evals.items():
            p_eval = plan.test_probability if cond == "attacked" else 0.0
            files.evals.write(run_id, name, cond, p_eval, m, s, plan.eval_episodes)
        files.close()
        write_summary(files.dir, record)
        trainer.episode_callbacks.clear()
    return record


def _failed(plan: ExperimentPlan, seed: int, p: float, trainer: Trainer,
            out_dir: Optional[Path]) -> RunRecord:
    run_id = plan.run_id(seed, p)
    if out_dir is not None:
        files = _RunFiles(Path(out_dir) / "runs" / run_id, run_id, seed, plan.window)
        c = trainer.curve
        for ep, st, rt, af in zip(c.episodes, c.steps, c.returns, c.attacked_fraction):
            files.episodes.episode(ep, st, rt, af)
        files.close()
    record = RunRecord(run_id, seed, plan.variant, p, "failed-pretrain", trainer.curve,
                       pretrain_steps=trainer.agent.step)
    if out_dir is not None:
        write_summary(files.dir, record)
    return record


def write_summary(run_dir: Path, record: RunRecord) -> Path:
    """Per-run ``summary.json``: status, onset, attack counts, phase transition."""
    tr = record.stats.transition if record.stats else None
    doc = {"run_id": record.run_id, "seed": record.seed, "variant": record.variant,
           "probability": record.probability, "status": record.status,
           "pretrain_steps": record.pretrain_steps, "onset_episode": record.onset_episode,
           "episodes": len(record.curve), "attack": record.attack_summary,
           "transition": asdict(tr) if tr else None,
           "checkpoints": {k: str(v) for k, v in record.checkpoint_paths.items()}}
    path = Path(run_dir) / "summary.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _cell(plan: ExperimentPlan, seed: int, probabilities: Sequence[float],
          out_dir: Optional[Path]) -> list[RunRecord]:
    trainer, converged = pretrain(plan, seed)
    if not converged:
        return [_failed(plan, seed, p, trainer, out_dir) for p in probabilities]
    records = []
    for i, p in enumerate(probabilities):
        branch = trainer if i == len(probabilities) - 1 else copy.deepcopy(trainer)
        records.append(attack_phase(branch, plan, seed, p, out_dir))
    return records


def run_training_attack_experiment(plan: ExperimentPlan, out_dir=None) -> list[RunRecord]:
    """One record per seed: pretrain to convergence, then train under attack at ``plan.attack.probability``."""
    out = Path(out_dir) if out_dir is not None else None
    records = []
    for seed in plan.seeds:
        records.extend(_cell(plan, seed, [plan.attack.probability], out))
    if out is not None:
        merge_outputs(out, records)
    return records


def run_sweep(plan: ExperimentPlan, probabilities: Sequence[float],
              variants: Sequence[str] = ("epsilon-greedy", "noisy-net"),
              out_dir=None, workers: int = 1) -> list[RunRecord]:
    """Every (variant, seed) pretrains once; each probability branches from that point."""
    out = Path(out_dir) if out_dir is not None else None
    cells = [(replace(plan, agent=replace(plan.agent, exploration=v)), seed)
             for v in variants for seed in plan.seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_cell, cp, s, list(probabilities), out) for cp, s in cells]
            results = [f.result() for f in futs]
    else:
        results = [_cell(cp, s, list(probabilities), out) for cp, s in cells]
    records = [r for cell in results for r in cell]
    if out is not None:
        merge_outputs(out, records)
    return records


def merge_outputs(out_dir: Path, records: Sequence[RunRecord]):
    runs = [Path(out_dir) / "runs" / r.run_id for r in records]
    for name, fields in (("episodes.csv", EPISODE_FIELDS), ("attacks.csv", ATTACK_FIELDS),
                         ("evals.csv", EVAL_FIELDS)):
        merge([d / name for d in runs], Path(out_dir) / name, fields)


# ---------------------------------------------------------------- comparison

@dataclass
class ExplorationComparison:
    rows: list
    deltas: list


def _summary_row(rec: RunRecord) -> dict:
    row = {"variant": rec.variant, "p": rec.probability, "seed": rec.seed, "status": rec.status,
           "min_value": None, "episodes_to_min": None, "episodes_to_recovery": None,
           "attacked_eval_mean": None}
    tr = rec.stats.transition if rec.stats else None
    if tr is not None:
        row["min_value"] = tr.min_value
        row["episodes_to_min"] = tr.min_episode - rec.onset_episode
        if tr.recovery_episode is not None:
            row["episodes_to_recovery"] = tr.recovery_episode - rec.onset_episode
    ev = rec.evals.get(("adv-trained", "attacked"))
    if ev is not None:
        row["attacked_eval_mean"] = ev[0]
    return row


def compare_exploration(eps_records: Sequence[RunRecord],
                        noisy_records: Sequence[RunRecord]) -> ExplorationComparison:
    """Side-by-side resilience/robustness numbers for matched runs (noisy minus eps-greedy deltas)."""
    def keyed(recs, variant):
        out = {}
        for r in recs:
            if r.variant != variant:
                raise ValueError(f"record {r.run_id} is not a {variant} run")
            out[(r.probability, r.seed)] = _summary_row(r)
        return out

    a = keyed(eps_records, "epsilon-greedy")
    b = keyed(noisy_records, "noisy-net")
    if a.keys() != b.keys():
        raise ValueError("exploration variants were not run on matching (p, seed) cells")
    rows, deltas = [], []
    for key in sorted(a):
        rows += [a[key], b[key]]
        d = {"p": key[0], "seed": key[1]}
        for f in ("min_value", "episodes_to_min", "episodes_to_recovery", "attacked_eval_mean"):
            x, y = a[key][f], b[key][f]
            d[f] = None if x is None or y is None else y - x
        deltas.append(d)
    return ExplorationComparison(rows, deltas)
