"""End-to-end acceptance suite. Each criterion records one PASS/FAIL line,
printed in the terminal summary.

Criteria 5-8 and 11 share one CLI sweep over the shipped grid-catch config;
it is the slow part of the suite (tens of minutes on one core).
"""
import json
import time
from math import erfc, sqrt
from pathlib import Path

import numpy as np
import pytest

from advrl.adversary import AttackConfig, AttackLog, MitmFilter, adversarial_loss
from advrl.agent import AgentConfig, ReplayBuffer, Trainer, clip_reward, run_training
from advrl.cli import main
from advrl.csvio import read_rows
from advrl.envs import EnvSpec, Transition, make_env, optimal_return
from advrl.harness import detect_phase_transition, rolling_mean
from advrl.nn import DenseLayer, Network, forward, input_gradient, td_gradients
from conftest import ACCEPTANCE_LINES, fd_grad

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "grid_catch.yaml"
VARIANTS = ("epsilon-greedy", "noisy-net")


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1. gradients

def _rel_ok(a, n, rel=1e-4, floor=1e-7):
    return np.abs(a - n) <= np.maximum(rel * np.maximum(np.abs(a), np.abs(n)), floor)


def test_c1_gradient_correctness():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    bad, checked = 0, 0
    for _ in range(50):
        depth = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 33, size=depth + 1)]
        layers = [DenseLayer(rng.normal(0, 1 / np.sqrt(i), (o, i)), rng.normal(0, 0.5, o),
                             "identity" if k == depth - 1 else "relu")
                  for k, (i, o) in enumerate(zip(sizes, sizes[1:]))]
        net = Network(layers)
        xb = rng.normal(size=(4, sizes[0]))
        actions = rng.integers(sizes[-1], size=4)
        targets = rng.normal(size=4)
        _, grads = td_gradients(net, xb, actions, targets)

        def loss():
            q = forward(net, xb)
            return np.mean((targets - q[np.arange(4), actions]) ** 2)

        for layer, g in zip(net.layers, grads.layers):
            for name in ("weights", "biases"):
                arr = getattr(layer, name)
                orig = arr.copy()
                num = fd_grad(lambda v: (arr.__setitem__(..., v), loss())[1], orig)
                arr[...] = orig
                ok = _rel_ok(g[name], num)
                bad += int(np.sum(~ok))
                checked += ok.size
        # input gradient of a random linear readout and of the attack loss
        x = rng.normal(size=sizes[0])
        c = rng.normal(size=sizes[-1])
        num = fd_grad(lambda v: float(c @ forward(net, v)), x)
        ana = input_gradient(net, x, lambda q: (float(c @ q), c))
        ok = _rel_ok(ana, num)
        a_star = int(np.argmax(forward(net, x)))

        def ce(v):
            q = forward(net, v)
            z = q - q.max()
            return -(z[a_star] - np.log(np.exp(z).sum()))

        ok2 = _rel_ok(input_gradient(net, x, adversarial_loss), fd_grad(ce, x))
        bad += int(np.sum(~ok) + np.sum(~ok2))
        checked += ok.size + ok2.size
    dt = time.perf_counter() - t0
    report(1, bad == 0 and dt < 10.0,
           f"{checked} gradient entries on 50 nets, {bad} outside 1e-4 rel / 1e-7 abs, {dt:.1f}s")


# ---------------------------------------------------------------- 2. learning baseline

@pytest.fixture(scope="module")
def baseline():
    spec = EnvSpec()
    cfg = AgentConfig(exploration="epsilon-greedy", total_steps=50_000)
    out = []
    for seed in range(3):
        t0 = time.perf_counter()
        tr = Trainer(cfg, spec, seed)
        reached = tr.run(cfg.total_steps, until=lambda t: len(t.curve) >= 100
                         and rolling_mean(t.curve.returns[-100:], 100)[-1] >= 0.9)
        out.append((seed, tr, reached, time.perf_counter() - t0))
    return spec, out


@pytest.mark.slow
def test_c2_learning_baseline(baseline):
    spec, runs = baseline
    assert optimal_return(spec) == 1.0
    hits = sum(r for _, _, r, _ in runs)
    slow = max(dt for *_, dt in runs)
    detail = ", ".join(f"seed {s}: {'>=0.9' if r else 'no'} at step {t.agent.step} ({dt:.0f}s)"
                       for s, t, r, dt in runs)
    report(2, hits >= 2 and slow < 180, f"{hits}/3 seeds reach rolling mean 0.9; {detail}")


# ---------------------------------------------------------------- 3. FGSM budget

@pytest.mark.slow
def test_c3_fgsm_budget(baseline):
    spec, runs = baseline
    net = runs[0][1].online
    filt = MitmFilter(lambda: net, AttackConfig(1.0, 0.004), np.random.default_rng(3),
                      log=AttackLog(keep=True))
    env = make_env(spec, np.random.default_rng(4))
    worst, out_of_range, n = 0.0, 0, 0
    step = 0
    while n < 1000:
        obs, done = env.reset(), False
        while not done and n < 1000:
            adv = filt(obs, step)
            worst = max(worst, float(np.max(np.abs(adv - obs))))
            out_of_range += int(np.sum((adv < 0) | (adv > 1)))
            n += 1
            step += 1
            obs, _, done = env.step(int(np.argmax(forward(net, adv))))
    logged = max(r.delta_inf_norm for r in filt.log.records)
    flips = filt.log.flips
    ok = worst <= 0.004 and logged <= 0.004 and out_of_range == 0 and filt.log.attacks == 1000
    report(3, ok, f"1000 attacked observations, max |delta|_inf {worst:.6g}, "
                  f"{out_of_range} entries outside [0,1], {flips} greedy-action flips")


@pytest.mark.slow
def test_fgsm_pressure_grows_with_budget(baseline):
    spec, runs = baseline
    net = runs[0][1].online
    env = make_env(spec, np.random.default_rng(5))
    obs_set = []
    while len(obs_set) < 500:
        obs, done = env.reset(), False
        while not done:
            obs_set.append(obs)
            obs, _, done = env.step(int(np.argmax(forward(net, obs))))
    flips = {}
    for eps in (0.004, 0.05):
        filt = MitmFilter(lambda: net, AttackConfig(1.0, eps), np.random.default_rng(0))
        for k, o in enumerate(obs_set):
            filt(o, k)
        flips[eps] = filt.log.flips / filt.log.attacks
    assert flips[0.05] > flips[0.004]


# ---------------------------------------------------------------- 4. attack rate

def test_c4_attack_rate():
    spec = EnvSpec(grid_height=5, grid_width=5, frame_stack=1)
    net = Network([DenseLayer(np.random.default_rng(0).normal(size=(3, spec.obs_dim)), np.zeros(3),
                              "identity")])
    filt = MitmFilter(lambda: net, AttackConfig(0.2, 0.004), np.random.default_rng(11),
                      log=AttackLog(keep=False))
    obs = np.zeros(spec.obs_dim)
    for step in range(100_000):
        filt(obs, step)
    frac = filt.log.attacked_fraction
    report(4, filt.log.decisions == 100_000 and 0.196 <= frac <= 0.204,
           f"attacked fraction {frac:.5f} over {filt.log.decisions} decisions")


# ---------------------------------------------------------------- sweep (5-8, 11)

@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    code = main(["sweep", "--config", str(CONFIG), "--out", str(out)])
    dt = time.perf_counter() - t0
    runs = {}
    for summary in sorted((out / "runs").glob("*/summary.json")):
        s = json.loads(summary.read_text())
        rows = read_rows(summary.parent / "episodes.csv")
        s["rolling"] = np.array([float(r["rolling_mean_100"]) for r in rows])
        s["evals"] = {(r["checkpoint"], r["condition"]): float(r["mean_return"])
                      for r in read_rows(summary.parent / "evals.csv")}
        runs[(s["variant"], s["probability"], s["seed"])] = s
    return out, code, dt, runs


def _transition(run):
    return detect_phase_transition(run["rolling"], run["onset_episode"], 100)


@pytest.mark.slow
def test_c5_recovery_at_low_p(sweep):
    _, _, _, runs = sweep
    parts, ok = [], True
    for v in VARIANTS:
        good = 0
        for seed in (0, 1, 2):
            run = runs.get((v, 0.2, seed))
            if run is None or run["status"] != "ok":
                continue
            tr = _transition(run)
            dipped = tr is not None and tr.min_value < 0.9 * tr.pre_onset
            after = tr is not None and tr.min_episode > run["onset_episode"]
            good += bool(dipped and after and tr.recovered)
        parts.append(f"{v} {good}/3")
        ok &= good >= 2
    report(5, ok, "p=0.2 dip below 90% then recovery to 80% of pre-onset: " + ", ".join(parts))


@pytest.mark.slow
def test_c6_no_recovery_at_p1(sweep):
    _, _, _, runs = sweep
    parts, ok = [], True
    for v in VARIANTS:
        ratios = []
        for seed in (0, 1, 2):
            run = runs.get((v, 1.0, seed))
            if run is None or run["status"] != "ok":
                ratios.append(np.nan)
                continue
            pre = run["rolling"][run["onset_episode"]]
            ratios.append(run["rolling"][-1] / pre)
        n = sum(r < 0.5 for r in ratios)
        parts.append(f"{v} {n}/3 (final/pre {', '.join(f'{r:.2f}' for r in ratios)})")
        ok &= n == 3
    report(6, ok, "p=1.0 final rolling mean < 50% of pre-onset: " + "; ".join(parts))


@pytest.mark.slow
def test_c7_clean_retention(sweep):
    _, _, _, runs = sweep
    parts, ok = [], True
    for v in VARIANTS:
        good, desc = 0, []
        for seed in (0, 1, 2):
            run = runs.get((v, 0.2, seed))
            if run is None or run["status"] != "ok":
                continue
            tr = _transition(run)
            base = run["evals"][("clean", "clean")]
            adv = run["evals"][("adv-trained", "clean")]
            # retention: adversarial training may not cost more than 10% clean return
            hit = bool(tr and tr.recovered) and adv >= base - 0.1 * abs(base)
            good += hit
            desc.append(f"{adv:.2f} vs {base:.2f}")
        parts.append(f"{v} {good}/3 ({', '.join(desc)})")
        ok &= good >= 2
    report(7, ok, "adv-trained clean eval no more than 10% below clean checkpoint: " + "; ".join(parts))


@pytest.mark.slow
def test_c8_robustness_ordering(sweep):
    _, _, _, runs = sweep
    parts, ok = [], True
    for v in VARIANTS:
        adv, clean = [], []
        for seed in (0, 1, 2):
            run = runs.get((v, 0.2, seed))
            if run is None or run["status"] != "ok":
                continue
            adv.append(run["evals"][("adv-trained", "attacked")])
            clean.append(run["evals"][("clean", "attacked")])
        margin = np.mean(adv) - np.mean(clean) if len(adv) == 3 else np.nan
        parts.append(f"{v} margin {margin:+.3f} ({np.mean(adv):.2f} vs {np.mean(clean):.2f})")
        ok &= bool(margin > 0)
    report(8, ok, "p=1.0 attacked eval, adv-trained minus clean: " + "; ".join(parts))


@pytest.mark.slow
def test_c11_end_to_end_sweep(sweep):
    out, code, dt, runs = sweep
    files = ["episodes.csv", "attacks.csv", "evals.csv", "comparison.csv", "comparison_deltas.csv",
             "plots/training_attacks.svg", "plots/evaluations.svg"]
    missing = [f for f in files if not (out / f).exists()]
    ids = {r["run_id"] for r in read_rows(out / "episodes.csv")}
    ok = code == 0 and not missing and len(ids) == 24 and len(runs) == 24 and dt < 7200
    report(11, ok, f"exit {code}, {len(ids)} runs, missing {missing or 'none'}, {dt / 60:.1f} min")


# ---------------------------------------------------------------- 9. NoisyNet reduction

def test_c9_zero_sigma_noisy_equals_greedy():
    spec = EnvSpec()
    common = dict(total_steps=4000, train_start=200, target_sync_interval=200)
    plain = AgentConfig(epsilon_start=0.0, epsilon_end=0.0, **common)
    noisy = AgentConfig(exploration="noisy-net", sigma_init=0.0, train_sigma=False, **common)
    a_agent, a = run_training(plain, spec, None, seed=5)
    b_agent, b = run_training(noisy, spec, None, seed=5)
    same = a == b and a_agent.losses == b_agent.losses
    report(9, same and len(a_agent.losses) > 0,
           f"{len(a)} episodes, {len(a_agent.losses)} losses, bit-identical={same}")


# ---------------------------------------------------------------- 10. bookkeeping

def _chi2_sf(stat, dof):
    # Wilson-Hilferty normal approximation to the chi-square tail
    z = ((stat / dof) ** (1 / 3) - (1 - 2 / (9 * dof))) / sqrt(2 / (9 * dof))
    return 0.5 * erfc(z / sqrt(2))


def test_c10_replay_and_target_bookkeeping():
    n = 64
    buf = ReplayBuffer(n, 1)
    for i in range(n + 10):
        buf.add(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0]), False))
    idx = buf.sample_indices(200_000, np.random.default_rng(2))
    counts = np.bincount(idx, minlength=n)
    expected = idx.size / n
    pval = _chi2_sf(float(np.sum((counts - expected) ** 2 / expected)), n - 1)
    uniform = pval > 0.001

    spec = EnvSpec(grid_height=6, grid_width=5, frame_stack=2)
    cfg = AgentConfig(total_steps=1000, train_start=50, batch_size=16, buffer_capacity=500,
                      target_sync_interval=50, hidden=(16,))
    tr = Trainer(cfg, spec, 0)
    seen = {}

    def probe(obs, step):
        seen.setdefault(step, (tr.agent.target.parameter_vector().copy(),
                               tr.agent.online.parameter_vector().copy()))
        return obs

    tr.run(1000, probe)
    constant, exact, blocks = True, True, {}
    for s in sorted(seen):
        if s == 0:
            continue
        tgt, onl = seen[s]
        blk = (s - 1) // 50
        constant &= np.array_equal(tgt, blocks.setdefault(blk, tgt))
        if blk >= 1 and (s - 1) % 50 == 0:
            exact &= np.array_equal(tgt, onl)
    clipped = [clip_reward(r) for r in (5, -7, 0.3)] == [1.0, -1.0, 0.3]
    report(10, uniform and constant and exact and clipped and len(blocks) >= 15,
           f"chi2 p={pval:.3f}, target constant between syncs={constant}, "
           f"exact copy at syncs={exact}, clip {{5,-7,0.3}} ok={clipped}")
