"""Experiment configuration: YAML with unit-suffixed keys, strict validation, resolved dumps.

Every section mirrors a module-level config dataclass. Unknown keys are
rejected and every error carries the line of the offending node.
"""

from __future__ import annotations

import dataclasses
import platform
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import ChannelParams
from .env import EnvConfig, RewardUnits, RewardWeights
from .trainer import TrainConfig
from .world import RotorParams, WorldConfig

CONFIG_VERSION = 1
COMPUTE_KEYS = ("uav_cpu_hz", "cpu_capacitance", "fairness_scale")
REQUIRED = ("seed", "run_tag")


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` is a list of ``file:line: message`` diagnostics."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 100
    deterministic: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    run_tag: str
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    out_dir: str | None = None


def _sections():
    """section name -> (dataclass, allowed keys)."""
    world = [f.name for f in dataclasses.fields(WorldConfig) if f.name not in COMPUTE_KEYS]
    return {
        "world": (WorldConfig, world),
        "compute": (WorldConfig, list(COMPUTE_KEYS)),
        "channel": (ChannelParams, [f.name for f in dataclasses.fields(ChannelParams)]),
        "rotor": (RotorParams, [f.name for f in dataclasses.fields(RotorParams)]),
        "reward_weights": (RewardWeights, [f.name for f in dataclasses.fields(RewardWeights)]),
        "reward_units": (RewardUnits, [f.name for f in dataclasses.fields(RewardUnits)]),
        "env": (EnvConfig, ["observed_sds"]),
        "train": (TrainConfig, [f.name for f in dataclasses.fields(TrainConfig)]),
        "eval": (EvalSettings, [f.name for f in dataclasses.fields(EvalSettings)]),
    }


TOP_LEVEL = ("version", "seed", "run_tag", "out_dir") + tuple(_sections())


class _Checker:
    def __init__(self, source: str):
        self.source = source
        self.problems: list[str] = []

    def error(self, node, msg: str) -> None:
        line = node.start_mark.line + 1 if node is not None else 1
        self.problems.append(f"{self.source}:{line}: {msg}")

    def convert(self, node, hint, name: str):
        """Convert a scalar/sequence node to ``hint`` or record a problem and return None."""
        origin, args = typing.get_origin(hint), typing.get_args(hint)
        if origin in (typing.Union, types.UnionType):
            if isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
                return None
            (inner,) = [a for a in args if a is not type(None)]
            return self.convert(node, inner, name)
        if origin is tuple:
            if not isinstance(node, yaml.SequenceNode) or len(node.value) != len(args):
                self.error(node, f"{name}: expected a list of {len(args)} values")
                return None
            items = [self.convert(n, a, name) for n, a in zip(node.value, args)]
            return None if any(i is None for i in items) else tuple(items)
        if not isinstance(node, yaml.ScalarNode):
            self.error(node, f"{name}: expected a single {hint.__name__}")
            return None
        value = yaml.safe_load(yaml.serialize(node))
        if hint is bool:
            if isinstance(value, bool):
                return value
        elif hint is int:
            if isinstance(value, int) and not isinstance(value, bool):
                return value
        elif hint is float:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
            if isinstance(value, str):
                # YAML 1.1 reads 1e6 (no dot) as a string
                try:
                    return float(value)
                except ValueError:
                    pass
        elif hint is str:
            if isinstance(value, str):
                return value
        self.error(node, f"{name}: expected {hint.__name__}, got {value!r}")
        return None

    def section(self, node, cls, allowed: list[str], title: str) -> dict:
        if not isinstance(node, yaml.MappingNode):
            self.error(node, f"section '{title}' must be a mapping")
            return {}
        hints = typing.get_type_hints(cls)
        out = {}
        for k_node, v_node in node.value:
            key = k_node.value
            if key not in allowed:
                self.error(k_node, f"unknown key '{title}.{key}' (allowed: {', '.join(allowed)})")
                continue
            if key in out:
                self.error(k_node, f"duplicate key '{title}.{key}'")
                continue
            value = self.convert(v_node, hints[key], f"{title}.{key}")
            if value is not None or typing.get_origin(hints[key]) in (typing.Union,
                                                                      types.UnionType):
                out[key] = value
        return out


def _build(cls, kwargs: dict, checker: _Checker, node, title: str):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        checker.error(_key_node(node, str(exc)), f"{title}: {exc}")
        return None


def _key_node(node, message: str):
    """The key node a validation message names, else the section node itself."""
    if isinstance(node, yaml.MappingNode):
        for k_node, _ in node.value:
            if message.startswith(f"{k_node.value} ") or f" {k_node.value} " in message:
                return k_node
    return node


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    checker = _Checker(source)
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError([f"{source}:{line}: malformed YAML: {exc}"]) from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError([f"{source}:1: the config must be a mapping"])

    nodes = {}
    for k_node, v_node in root.value:
        if k_node.value not in TOP_LEVEL:
            checker.error(k_node, f"unknown key '{k_node.value}' (allowed: {', '.join(TOP_LEVEL)})")
        elif k_node.value in nodes:
            checker.error(k_node, f"duplicate key '{k_node.value}'")
        else:
            nodes[k_node.value] = v_node
    for key in REQUIRED:
        if key not in nodes:
            checker.error(root, f"missing required field '{key}'")

    top = {}
    for key, hint in (("version", int), ("seed", int), ("run_tag", str), ("out_dir", str)):
        if key in nodes:
            top[key] = checker.convert(nodes[key], hint, key)
    if top.get("version") not in (None, CONFIG_VERSION):
        checker.error(nodes["version"], f"unsupported config version {top['version']}")
    if isinstance(top.get("seed"), int) and top["seed"] < 0:
        checker.error(nodes["seed"], "seed must be >= 0")

    parts = {name: checker.section(nodes[name], cls, allowed, name) if name in nodes else {}
             for name, (cls, allowed) in _sections().items()}
    where = lambda *names: next((nodes[n] for n in names if n in nodes), root)  # noqa: E731

    world = _build(WorldConfig, {**parts["world"], **parts["compute"]}, checker,
                   where("world", "compute"), "world")
    channel = _build(ChannelParams, parts["channel"], checker, where("channel"), "channel")
    rotor = _build(RotorParams, parts["rotor"], checker, where("rotor"), "rotor")
    weights = _build(RewardWeights, parts["reward_weights"], checker, where("reward_weights"),
                     "reward_weights")
    units = _build(RewardUnits, parts["reward_units"], checker, where("reward_units"),
                   "reward_units")
    train = _build(TrainConfig, parts["train"], checker, where("train"), "train")
    evals = _build(EvalSettings, parts["eval"], checker, where("eval"), "eval")
    if evals is not None and evals.episodes < 1:
        checker.error(where("eval"), "eval.episodes must be >= 1")

    env = None
    if None not in (world, channel, rotor, weights, units):
        env = _build(EnvConfig, dict(world=world, channel=channel, rotor=rotor, weights=weights,
                                     units=units, **parts["env"]), checker, where("env"), "env")
        if env is not None:
            try:
                env.resolved_units()
            except ValueError as exc:
                checker.error(where("reward_units"), f"reward_units: {exc}")

    if checker.problems:
        raise ConfigError(checker.problems)
    return ExperimentConfig(seed=top["seed"], run_tag=top["run_tag"], env=env, train=train,
                            eval=evals, out_dir=top.get("out_dir"))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc.strerror}"]) from None
    return parse_config(text, str(path))


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Fully explicit config, loadable by ``parse_config``, plus resolved reward units."""
    env = cfg.env
    world = {f.name: _plain(getattr(env.world, f.name)) for f in dataclasses.fields(WorldConfig)}
    out = {
        "version": CONFIG_VERSION,
        "seed": cfg.seed,
        "run_tag": cfg.run_tag,
        "world": {k: v for k, v in world.items() if k not in COMPUTE_KEYS},
        "compute": {k: world[k] for k in COMPUTE_KEYS},
        "channel": dataclasses.asdict(env.channel),
        "rotor": dataclasses.asdict(env.rotor),
        "reward_weights": dataclasses.asdict(env.weights),
        "reward_units": env.resolved_units(),
        "env": {"observed_sds": env.observed_sds},
        "train": {k: _plain(v) for k, v in dataclasses.asdict(cfg.train).items()},
        "eval": dataclasses.asdict(cfg.eval),
    }
    if cfg.out_dir is not None:
        out["out_dir"] = cfg.out_dir
    return out


def versions() -> dict:
    return {"uavmec": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "pyyaml": yaml.__version__}


def dump_resolved(cfg: ExperimentConfig, path) -> None:
    doc = resolved_dict(cfg)
    header = "# resolved configuration; " + ", ".join(f"{k} {v}" for k, v in versions().items())
    Path(path).write_text(header + "\n" + yaml.safe_dump(doc, sort_keys=False))


def override(cfg: ExperimentConfig, seed=None, workers=None, episodes=None,
             out_dir=None) -> ExperimentConfig:
    """Apply command-line overrides; ``episodes`` sets the training length."""
    train = cfg.train
    if workers is not None:
        train = dataclasses.replace(train, workers=workers)
    if episodes is not None:
        train = dataclasses.replace(train, episodes=episodes)
    return dataclasses.replace(cfg, seed=cfg.seed if seed is None else seed, train=train,
                               out_dir=cfg.out_dir if out_dir is None else str(out_dir))
