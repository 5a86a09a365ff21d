"""Pipeline configuration: one YAML or JSON document, strictly validated."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .complete import CompleteConfig
from .corrupt import STRATEGIES, AugConfig
from .metrics import LossWeights
from .realize import RealizeConfig

ENV_VAR = "FUNCFIX_CONFIG"
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulateConfig:
    frames: int = 50
    threshold: float = 0.005
    dist_tol: float = 0.01
    dot_tol: float = 0.99

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if not self.threshold >= 0:
            raise ValueError("threshold must be nonnegative")
        if not -1 <= self.dot_tol <= 1:
            raise ValueError("dot_tol must lie in [-1, 1]")


@dataclass(frozen=True)
class InputConfig:
    contact_eps: float = 0.005
    corruption: str | None = None  # optional strategy applied to the parsed graph
    severity: float = 1.0

    def __post_init__(self):
        if self.corruption is not None and self.corruption not in STRATEGIES:
            raise ValueError(f"unknown corruption strategy {self.corruption!r}")
        if not 0 <= self.severity <= 1:
            raise ValueError("severity must lie in [0, 1]")
        if not self.contact_eps >= 0:
            raise ValueError("contact_eps must be nonnegative")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    parallelism: int = 1
    output_dir: str = "funcfix_out"
    input: InputConfig = field(default_factory=InputConfig)
    complete: CompleteConfig = field(default_factory=CompleteConfig)
    realize: RealizeConfig = field(default_factory=RealizeConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    augment: AugConfig = field(default_factory=AugConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["schema_version"] = SCHEMA_VERSION
        return doc


def _build(cls, doc: Mapping[str, Any], path: str):
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path or '/'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known) - ({"schema_version"} if not path else set()))
    if unknown:
        raise ConfigError(f"{path or '/'}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in doc.items():
        if name == "schema_version":
            continue
        f = known[name]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        sub = f"{path}/{name}"
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{sub}: expected true/false")
            kwargs[name] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{sub}: expected a number")
            kwargs[name] = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{sub}: expected an integer")
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '/'}: {exc}") from None


def config_from_dict(doc: Mapping[str, Any] | None) -> PipelineConfig:
    doc = dict(doc or {})
    ver = doc.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {ver!r}")
    return _build(PipelineConfig, doc, "")


def load_config(path: str | None = None) -> PipelineConfig:
    """Read a config file; falls back to $FUNCFIX_CONFIG, then to defaults."""
    path = path or os.environ.get(ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparsable config {path}: {exc}") from None
    return config_from_dict(doc)
