"""JSON run configuration: one document with backbone/model/train/data/io records.

Unknown keys are rejected at every level. Relative paths resolve against the
directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backbone import BackboneConfig
from .data import AugmentPolicy
from .errors import ConfigError
from .model import ModelConfig, NetworkConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    augmentation: AugmentPolicy = field(default_factory=AugmentPolicy)
    manifests: dict = field(default_factory=dict)  # split -> manifest path


@dataclass
class IOConfig:
    checkpoint: str = "run/model.ckpt"
    log: str = "run/train_log.csv"
    report: str = "run/report.json"


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IOConfig = field(default_factory=IOConfig)
    base_dir: Optional[str] = field(default=None, repr=False)

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(backbone=self.backbone, model=self.model)

    def resolve(self, p: str) -> str:
        if self.base_dir is None or os.path.isabs(p):
            return p
        return str(Path(self.base_dir) / p)

    def manifest_path(self, split: str) -> str:
        try:
            return self.resolve(self.data.manifests[split])
        except KeyError:
            raise ConfigError(f"config names no manifest for split {split!r}") from None

    def validate(self) -> None:
        self.backbone.validate()
        self.model.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    (RunConfig, "backbone"): BackboneConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "io"): IOConfig,
    (DataConfig, "augmentation"): AugmentPolicy,
}


def config_from_dict(raw: dict, base_dir: Optional[str] = None) -> RunConfig:
    cfg = _build(RunConfig, raw, "config")
    cfg.base_dir = base_dir
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw, base_dir=str(path.resolve().parent))
