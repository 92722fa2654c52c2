"""Named, independent random streams derived from a single integer seed.

Every stochastic consumer in a run gets its own generator so that, for
example, turning the attack on does not shift the environment's spawn
sequence.
"""
import numpy as np

STREAM_NAMES = ("env", "init", "exploration", "attack", "replay", "eval")


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAM_NAMES:
        raise KeyError(f"unknown rng stream {name!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAM_NAMES.index(name),))
    return np.random.Generator(np.random.PCG64(ss))


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAM_NAMES}
