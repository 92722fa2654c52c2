#!/usr/bin/env python3
"""Run the full grid-catch sweep (p grid x exploration variant x seeds) and
print the per-run phase-transition summary.

    python3 scripts/run_sweep.py --out runs/sweep
    python3 scripts/run_sweep.py --config configs/smoke.yaml --out /tmp/smoke
"""
import argparse
import json
import sys
from pathlib import Path

from advrl.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def summarize(out: Path):
    rows = []
    for path in sorted((out / "runs").glob("*/summary.json")):
        s = json.loads(path.read_text())
        tr = s["transition"] or {}
        rows.append((s["run_id"], s["status"], tr.get("pre_onset"), tr.get("min_value"),
                     tr.get("recovered")))
    print(f"{'run':42s} {'status':16s} {'pre':>6s} {'min':>6s} recovered")
    for run_id, status, pre, lo, rec in rows:
        pre_s = f"{pre:6.2f}" if pre is not None else "     -"
        lo_s = f"{lo:6.2f}" if lo is not None else "     -"
        print(f"{run_id:42s} {status:16s} {pre_s} {lo_s} {rec}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "grid_catch.yaml"))
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    argv = ["sweep", "--config", args.config, "--out", args.out]
    for s in args.set:
        argv += ["--set", s]
    code = cli_main(argv)
    summarize(Path(args.out))
    return code


if __name__ == "__main__":
    sys.exit(main())
