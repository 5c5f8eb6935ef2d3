"""Run configuration: one JSON document with a section per module.

Unknown keys are rejected and every section is re-validated by its
dataclass on load.  Overrides use dotted paths, e.g. ``train.alpha=0.2``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .augment import AugmentConfig
from .ingest import SynthConfig
from .sampler import PairSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    data_dir: str = "runs/synth/data"
    split_file: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class EvalOptions:
    runs: int = 1
    export_embeddings: bool = False
    svg: bool = True

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


SECTIONS = {
    "synth": SynthConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "pairs": PairSpec,
    "paths": Paths,
    "eval": EvalOptions,
}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pairs: PairSpec = field(default_factory=PairSpec)
    paths: Paths = field(default_factory=Paths)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def __post_init__(self):
        if self.augment.target_len != self.train.target_len:
            raise ConfigError("augment.target_len must equal train.target_len")

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_training_seed(self, seed: int) -> "RunConfig":
        """Same run with ``seed`` driving initialisation, pairing and shuffling."""
        return dataclasses.replace(
            self,
            train=dataclasses.replace(self.train, seed=seed),
            augment=dataclasses.replace(self.augment, seed=seed),
            pairs=dataclasses.replace(self.pairs, seed=seed),
        )


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build_section(name: str, values: dict) -> Any:
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} config: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    sections = {name: _build_section(name, data.get(name, {})) for name in SECTIONS}
    try:
        return RunConfig(**sections)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides or []:
        apply_override(data, item)
    return from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Apply ``section.key=value`` in place; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    path, raw = item.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {path!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    section, key = parts
    data.setdefault(section, {})
    if not isinstance(data[section], dict):
        raise ConfigError(f"section {section!r} must be an object")
    data[section][key] = value
