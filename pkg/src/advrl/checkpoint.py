"""Binary checkpoints: a versioned text header, a JSON descriptor line, then
the flat float64 parameter payload (little-endian)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import EnvSpec
from .errors import CheckpointError
from .exploration import NoisyDenseLayer
from .nn import DenseLayer, Network

HEADER = b"ADVRL-CKPT-1"


@dataclass
class Checkpoint:
    network: Network
    env: EnvSpec
    exploration: str
    step: int = 0


def _descriptor(ckpt: Checkpoint) -> dict:
    layers = []
    for layer in ckpt.network.layers:
        kind = "noisy" if isinstance(layer, NoisyDenseLayer) else "dense"
        layers.append({"kind": kind, "in": layer.in_dim, "out": layer.out_dim,
                       "activation": layer.activation})
    return {"layers": layers, "step": int(ckpt.step), "env": ckpt.env.to_dict(),
            "exploration": ckpt.exploration}


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = ckpt.network.parameter_vector().astype("<f8")
    desc = _descriptor(ckpt)
    desc["payload_len"] = int(payload.size)
    with open(path, "wb") as fh:
        fh.write(HEADER + b"\n")
        fh.write(json.dumps(desc, sort_keys=True).encode() + b"\n")
        fh.write(payload.tobytes())
    return path


def load_checkpoint(path, expect_env: EnvSpec | None = None) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    head, _, rest = raw.partition(b"\n")
    if head != HEADER:
        raise CheckpointError(f"unsupported checkpoint version {head[:32]!r}, expected {HEADER!r}")
    desc_line, sep, payload = rest.partition(b"\n")
    if not sep:
        raise CheckpointError("checkpoint truncated before payload")
    try:
        desc = json.loads(desc_line)
        env = EnvSpec(**desc["env"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt checkpoint descriptor: {e}") from e

    sizes = []
    for d in desc["layers"]:
        n = d["out"] * d["in"] + d["out"]
        sizes.append(2 * n if d["kind"] == "noisy" else n)
    expected = sum(sizes)
    if desc.get("payload_len") != expected or len(payload) != 8 * expected:
        raise CheckpointError(
            f"payload length mismatch: descriptor wants {expected} values, file has {len(payload) / 8:g}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    layers, pos = [], 0
    for d in desc["layers"]:
        o, i = d["out"], d["in"]

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            out = flat[pos:pos + n].reshape(shape).copy()
            pos += n
            return out

        if d["kind"] == "noisy":
            layers.append(NoisyDenseLayer(mu_weights=take((o, i)), sigma_weights=take((o, i)),
                                          mu_bias=take((o,)), sigma_bias=take((o,)),
                                          activation=d["activation"]))
        else:
            layers.append(DenseLayer(take((o, i)), take((o,)), d["activation"]))
    ckpt = Checkpoint(Network(layers), env, desc["exploration"], desc["step"])
    if expect_env is not None and expect_env != env:
        raise CheckpointError(f"checkpoint was trained on {env.name} {env}, plan expects {expect_env}")
    return ckpt
