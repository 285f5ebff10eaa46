"""Run configuration: TOML with dotted sections, merged over typed defaults.

Example::

    seed = 0
    sac.variant = "imkl"
    sac.tau = 1.2
    train.total_steps = 50000
    scenarios.seeds = [0, 1, 2, 3]

Unknown keys are rejected. ``dumps`` writes the fully resolved configuration
back in the same flat form so every output directory records what ran.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents.bc import BcConfig
from .agents.sac import SacConfig
from .agents.training import TrainConfig
from .errors import ConfigError
from .scenario import SCENE_KINDS


@dataclass(frozen=True)
class ScenarioSpec:
    """Where scenarios come from: generated (kinds x seeds) or a list of files."""

    kinds: tuple = SCENE_KINDS
    seeds: tuple = (0, 1, 2, 3)
    num_frames: int = 250
    paths: tuple = ()
    validation_seeds: tuple = (100, 101)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    bc_checkpoint: str = ""
    scenarios: ScenarioSpec = field(default_factory=ScenarioSpec)
    bc: BcConfig = field(default_factory=BcConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


SECTIONS = {"scenarios": ScenarioSpec, "bc": BcConfig, "sac": SacConfig, "train": TrainConfig}


def _coerce(cls, name, value, where):
    f = {x.name: x for x in dataclasses.fields(cls)}.get(name)
    if f is None:
        raise ConfigError(f"unknown config key '{where}'")
    default = getattr(cls(), name) if cls is not RunConfig else None
    if isinstance(value, list):
        return tuple(value)
    if (isinstance(default, bool) or "bool" in str(f.type)) and not isinstance(value, bool):
        raise ConfigError(f"'{where}' must be true or false")
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def from_dict(data: dict) -> RunConfig:
    top = {}
    sections = {}
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a table of keys")
            cls = SECTIONS[key]
            kwargs = {k: _coerce(cls, k, v, f"{key}.{k}") for k, v in value.items()}
            try:
                sections[key] = cls(**kwargs)
            except TypeError as exc:
                raise ConfigError(f"bad '{key}' section: {exc}") from None
        elif key in ("seed", "out", "bc_checkpoint"):
            top[key] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")
    if "seed" in top and (not isinstance(top["seed"], int) or isinstance(top["seed"], bool)):
        raise ConfigError("'seed' must be an integer")
    return RunConfig(**top, **sections)


def loads(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return from_dict(data)


def load(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return loads(p.read_text())


def _toml_value(v) -> str:
    if v is None:
        raise ConfigError("None cannot be written to TOML")
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def dumps(cfg: RunConfig) -> str:
    """Flat dotted-key TOML; optional keys left unset are omitted."""
    lines = [f"seed = {cfg.seed}", f"out = {_toml_value(cfg.out)}", f"bc_checkpoint = {_toml_value(cfg.bc_checkpoint)}"]
    for name in SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if value is None:
                continue
            lines.append(f"{name}.{f.name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def replace(cfg: RunConfig, **changes) -> RunConfig:
    """Override top-level fields or ``section__key`` entries."""
    top = {}
    nested = {}
    for key, value in changes.items():
        if "__" in key:
            section, name = key.split("__", 1)
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    for section, values in nested.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section '{section}'")
        try:
            top[section] = dataclasses.replace(getattr(cfg, section), **values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return dataclasses.replace(cfg, **top)


def write_resolved(cfg: RunConfig, out_dir, name: str = "config.toml") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(dumps(cfg))
    return path
