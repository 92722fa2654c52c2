"""Append-only CSV writers for episode curves, attack decisions and evaluations."""
from __future__ import annotations

import csv
import os
from collections import deque
from pathlib import Path

import numpy as np

EPISODE_FIELDS = ("run_id", "seed", "episode", "global_step", "raw_return",
                  "rolling_mean_100", "attacked_fraction")
ATTACK_FIELDS = ("run_id", "step", "attacked", "pre_action", "post_action", "delta_inf_norm")
EVAL_FIELDS = ("run_id", "checkpoint", "condition", "p", "mean_return", "std_return", "episodes")

SCHEMAS = {"episodes.csv": EPISODE_FIELDS, "attacks.csv": ATTACK_FIELDS, "evals.csv": EVAL_FIELDS}


def fmt(x) -> str:
    """Plain decimal text, never scientific notation."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return np.format_float_positional(float(x), trim="-")
    return str(x)


class CsvAppender:
    """Writes the header on open and flushes after every row."""

    def __init__(self, path, fields):
        self.path = Path(path)
        self.fields = tuple(fields)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(self.fields)
            self._fh.flush()

    def write(self, *values):
        if len(values) != len(self.fields):
            raise ValueError(f"expected {len(self.fields)} values, got {len(values)}")
        self._w.writerow([fmt(v) for v in values])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EpisodeWriter(CsvAppender):
    def __init__(self, path, run_id: str, seed: int, window: int = 100):
        super().__init__(path, EPISODE_FIELDS)
        self.run_id, self.seed = run_id, seed
        self._recent = deque(maxlen=window)

    def episode(self, episode: int, step: int, ret: float, attacked_fraction: float):
        self._recent.append(ret)
        self.write(self.run_id, self.seed, episode, step, ret,
                   float(np.mean(self._recent)), attacked_fraction)


def read_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def merge(parts, dest, fields):
    """Concatenate per-run CSVs into one file with a single header."""
    dest = Path(dest)
    tmp = dest.with_suffix(".tmp")
    with open(tmp, "w", newline="") as out:
        w = csv.writer(out)
        w.writerow(fields)
        for part in parts:
            for row in read_rows(part):
                w.writerow([row[f] for f in fields])
    os.replace(tmp, dest)
