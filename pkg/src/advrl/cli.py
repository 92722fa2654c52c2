"""Command line entry point: ``advrl {train,attack-train,eval,attack-eval,sweep,plot}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 pretraining never converged.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .agent import Trainer
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .csvio import EVAL_FIELDS, CsvAppender, EpisodeWriter, fmt
from .errors import CheckpointError, ConfigError
from .harness import (compare_exploration, evaluate_policy, run_sweep,
                      run_training_attack_experiment)
from .plot import evaluations_svg, learning_curves_svg

log = logging.getLogger("advrl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PRETRAIN = 0, 1, 2, 3


def _out(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    return out


def _seeds(args, cfg: RunConfig):
    return [args.seed] if args.seed is not None else list(cfg.experiment.seeds)


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out(args, cfg)
    for seed in _seeds(args, cfg):
        run_id = f"{cfg.env.name}-{cfg.agent.exploration}-train-s{seed}"
        run_dir = out / "runs" / run_id
        writer = EpisodeWriter(run_dir / "episodes.csv", run_id, seed, cfg.experiment.window)
        trainer = Trainer(cfg.agent, cfg.env, seed)
        trainer.episode_callbacks.append(lambda t: writer.episode(
            t.curve.episodes[-1], t.curve.steps[-1], t.curve.returns[-1], t.curve.attacked_fraction[-1]))
        trainer.run(cfg.agent.total_steps)
        writer.close()
        path = save_checkpoint(Checkpoint(trainer.online, cfg.env, cfg.agent.exploration,
                                          trainer.agent.step), run_dir / "final.ckpt")
        print(f"{run_id}: {len(trainer.curve)} episodes, checkpoint {path}")
    learning_curves_svg(_merge_episodes(out), out / "plots" / "train.svg", "clean training")
    return EXIT_OK


def _merge_episodes(out: Path) -> Path:
    from .csvio import EPISODE_FIELDS, merge
    parts = sorted((out / "runs").glob("*/episodes.csv"))
    merge(parts, out / "episodes.csv", EPISODE_FIELDS)
    return out / "episodes.csv"


def cmd_attack_train(args, cfg: RunConfig) -> int:
    out = _out(args, cfg)
    plan = cfg.plan()
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    records = run_training_attack_experiment(plan, out)
    for r in records:
        tr = r.stats.transition if r.stats else None
        print(f"{r.run_id}: {r.status}" + (
            f", min {tr.min_value:.3f} at episode {tr.min_episode}, recovered={tr.recovered}" if tr else ""))
    _plots(out)
    return EXIT_PRETRAIN if any(r.status == "failed-pretrain" for r in records) else EXIT_OK


def _eval(args, cfg: RunConfig, attacked: bool) -> int:
    out = _out(args, cfg)
    ckpt = load_checkpoint(args.checkpoint, expect_env=cfg.env)
    use_attack = attacked if args.attack is None else args.attack == "fgsm"
    attack = replace(cfg.attack, probability=cfg.experiment.test_probability) if use_attack else None
    seed = args.seed if args.seed is not None else cfg.experiment.seeds[0]
    mean, std = evaluate_policy(ckpt, cfg.env, attack, cfg.experiment.eval_episodes, seed,
                                cfg.agent.noisy_eval)
    cond = "attacked" if attack else "clean"
    with CsvAppender(out / "evals.csv", EVAL_FIELDS) as w:
        w.write(Path(args.checkpoint).parent.name or "checkpoint", Path(args.checkpoint).name, cond,
                attack.probability if attack else 0.0, mean, std, cfg.experiment.eval_episodes)
    print(f"{cond}: mean {fmt(mean)} std {fmt(std)} over {cfg.experiment.eval_episodes} episodes")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out(args, cfg)
    plan = cfg.plan()
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    e = cfg.experiment
    records = run_sweep(plan, e.probabilities, e.variants, out, workers=e.workers)
    if set(e.variants) == {"epsilon-greedy", "noisy-net"}:
        cmp = compare_exploration([r for r in records if r.variant == "epsilon-greedy"],
                                  [r for r in records if r.variant == "noisy-net"])
        _write_table(out / "comparison.csv", cmp.rows)
        _write_table(out / "comparison_deltas.csv", cmp.deltas)
    _plots(out)
    failed = [r for r in records if r.status == "failed-pretrain"]
    print(f"sweep: {len(records)} runs, {len(failed)} failed pretraining, outputs in {out}")
    return EXIT_PRETRAIN if failed else EXIT_OK


def _write_table(path: Path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow(["" if v is None else fmt(v) for v in r.values()])


def _plots(out: Path):
    learning_curves_svg(out / "episodes.csv", out / "plots" / "training_attacks.svg")
    evaluations_svg(out / "evals.csv", out / "plots" / "evaluations.svg")


def cmd_plot(args, cfg: RunConfig) -> int:
    src = Path(args.input or args.out or cfg.output_dir)
    run_dir = src if src.is_dir() else src.parent
    episodes = src if src.suffix == ".csv" else src / "episodes.csv"
    dest = Path(args.out) if args.out else run_dir
    learning_curves_svg(episodes, dest / "plots" / "training_attacks.svg")
    evaluations_svg(run_dir / "evals.csv", dest / "plots" / "evaluations.svg")
    print(f"plots written to {dest / 'plots'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advrl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. agent.learning_rate=0.01")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="clean DQN training")
    sub.add_parser("attack-train", parents=[common], help="pretrain, then train under attack")
    for name in ("eval", "attack-eval"):
        sp = sub.add_parser(name, parents=[common], help=f"{name} a checkpoint")
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--attack", choices=("none", "fgsm"))
    sub.add_parser("sweep", parents=[common], help="p-grid x exploration-variant sweep")
    sp = sub.add_parser("plot", parents=[common], help="SVG plots from CSV outputs")
    sp.add_argument("--input", help="run directory or episodes.csv")
    return p


COMMANDS = {"train": cmd_train, "attack-train": cmd_attack_train,
            "eval": lambda a, c: _eval(a, c, attacked=False),
            "attack-eval": lambda a, c: _eval(a, c, attacked=True),
            "sweep": cmd_sweep, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
