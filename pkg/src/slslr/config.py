"""Run configuration: JSON file -> nested dataclasses, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationConfig
from .evaluation import EvalConfig
from .model import EncoderConfig, HeadConfig
from .trainer import PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train: str | None = None
    test: str | None = None
    checkpoint: str | None = None


@dataclass
class PretrainSection:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    no_predictor: bool = False
    no_layernorm: bool = False
    no_original: bool = False
    permuted_branches: bool = False
    normalize_embeddings: bool = False
    collapse_log_every: int = 1


@dataclass
class BoundaryConfig:
    stop_rule: str = "paper_literal"
    sweep: bool = False
    test_fraction: float = 0.3


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            **dataclasses.asdict(self.pretrain),
            augmentation=dataclasses.replace(self.augmentation),
            seed=self.seed,
            encoder=dataclasses.replace(self.encoder),
            head=dataclasses.replace(self.head),
        )

    def eval_config(self) -> EvalConfig:
        return dataclasses.replace(self.eval, seed=self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# desk-scale profile; everything not listed keeps the full-scale default
PROFILES = {
    "paper": {},
    "tiny": {
        "encoder": {"blocks": 2, "heads": 4, "embed_dim": 64, "max_len": 24},
        "head": {"projection_hidden": 64, "projection_out": 32, "predictor_hidden": 32},
        "pretrain": {"epochs": 20, "batch_size": 32, "learning_rate": 0.05},
        "eval": {
            "probe_epochs": 100,
            "finetune_epochs": 20,
            "warmup_steps": 24,
            "finetune_batch_size": 16,
            "repeats": 3,
        },
    },
}


def _dataclass_type(tp):
    """The dataclass inside ``tp`` (handles ``X | None``), or None."""
    if dataclasses.is_dataclass(tp):
        return tp
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        for arg in typing.get_args(tp):
            if dataclasses.is_dataclass(arg):
                return arg
    return None


def from_dict(cls, data: dict, where: str = ""):
    """Build dataclass ``cls`` from ``data``, recursing into nested sections."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key {where + key!r}")
    kwargs = {}
    for key, value in data.items():
        sub = _dataclass_type(hints[key])
        if sub is not None and value is not None:
            kwargs[key] = from_dict(sub, value, f"{where}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve(data: dict | None = None, profile: str = "paper") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    return from_dict(RunConfig, merge(PROFILES[profile], data or {}))


def load_config(path, profile: str = "paper") -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return resolve(data, profile)
