"""YAML run configuration with strict keys and ``--set section.key=value`` overrides."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .adversary import AttackConfig
from .agent import AgentConfig
from .envs import EnvSpec
from .errors import ConfigError
from .harness import ExperimentPlan

log = logging.getLogger(__name__)


@dataclass
class ExperimentSection:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    probabilities: list = field(default_factory=lambda: [0.2, 0.4, 0.8, 1.0])
    variants: list = field(default_factory=lambda: ["epsilon-greedy", "noisy-net"])
    eval_episodes: int = 100
    window: int = 100
    post_onset_factor: float = 3.0
    test_probability: float = 1.0
    workers: int = 1


SECTIONS = {"env": EnvSpec, "agent": AgentConfig, "attack": AttackConfig,
            "experiment": ExperimentSection}


@dataclass
class RunConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output_dir: str = "runs"

    def plan(self) -> ExperimentPlan:
        e = self.experiment
        return ExperimentPlan(env=self.env, agent=self.agent, attack=self.attack, seeds=tuple(e.seeds),
                              eval_episodes=e.eval_episodes, window=e.window,
                              post_onset_factor=e.post_onset_factor,
                              test_probability=e.test_probability)

    def to_dict(self) -> dict:
        d = {}
        for name in SECTIONS:
            sec = asdict(getattr(self, name))
            d[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
        d["output_dir"] = self.output_dir
        return d


def _build(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - set(SECTIONS) - {"output_dir"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name)
        if section is None:
            log.info("config: section %r missing, using defaults", name)
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        known = {f.name for f in fields(cls)}
        bad = set(section) - known
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        section = {k: _coerce_float(cls, k, v) for k, v in section.items()}
        for missing in sorted(known - set(section)):
            log.info("config: %s.%s not set, using default", name, missing)
        try:
            kwargs[name] = cls(**section)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {name!r} section: {e}") from e
    if "output_dir" not in raw:
        log.info("config: output_dir not set, using default")
    return RunConfig(**kwargs, output_dir=str(raw.get("output_dir", "runs")))


def _coerce_float(cls, key, value):
    # YAML 1.1 reads exponent-only literals such as 1e-5 as strings
    if not isinstance(value, str):
        return value
    f = next(f for f in fields(cls) if f.name == key)
    if "float" not in str(f.type):
        return value
    try:
        return float(value)
    except ValueError:
        return value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def parse_config(text: str, overrides=None) -> RunConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    return _build(apply_overrides(raw, overrides))


def load_config(path=None, overrides=None) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
