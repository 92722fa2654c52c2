#!/usr/bin/env python3
"""Scan the FGSM budget used for training-time attacks.

For each budget, runs the pretrain-then-attack protocol at p = 0.2 and
p = 1.0 and prints the dip, recovery and final/pre-onset ratio per seed.
This is how the budget in configs/grid_catch.yaml was chosen.

    python3 scripts/calibrate_epsilon.py --eps 0.05 0.07 0.1 --variant epsilon-greedy
"""
import argparse
from dataclasses import replace

from advrl.adversary import AttackConfig
from advrl.config import load_config
from advrl.harness import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.004, 0.02, 0.07])
    ap.add_argument("--variant", default="epsilon-greedy")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    base = load_config(args.config).plan()
    for eps in args.eps:
        plan = replace(base, attack=AttackConfig(0.2, eps), seeds=tuple(args.seeds))
        for r in run_sweep(plan, [0.2, 1.0], [args.variant]):
            tr = r.stats.transition if r.stats else None
            if tr is None:
                print(f"eps {eps:g} {r.run_id}: {r.status}")
                continue
            final = r.stats.rolling[-1]
            print(f"eps {eps:g} {r.run_id}: pre {tr.pre_onset:.2f} min {tr.min_value:.2f} "
                  f"recovered {tr.recovered} final/pre {final / tr.pre_onset:.2f}")


if __name__ == "__main__":
    main()
