"""Dual position-attention segmentation network and its argmax decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import PositionAttentionModule
from .backbone import Backbone, BackboneConfig
from .errors import ConfigError
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class ModelConfig:
    fusion_width: Optional[int] = None  # None -> tap-2 channel count
    num_classes: int = 9

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"model.num_classes must be >= 2, got {self.num_classes}")
        if self.fusion_width is not None and self.fusion_width < 1:
            raise ConfigError(f"model.fusion_width must be >= 1, got {self.fusion_width}")


@dataclass
class NetworkConfig:
    """Everything that fixes the parameter inventory; hashed into checkpoints."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "model": {"fusion_width": self.model.fusion_width, "num_classes": self.model.num_classes},
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            backbone=BackboneConfig(**d["backbone"]),
            model=ModelConfig(**d["model"]),
            in_channels=d.get("in_channels", 3),
        )


class ReDNet(Module):
    """Backbone taps 2 and 3 -> parallel attention -> 1x1 fusion -> sum -> classifier.

    The coarser tap-3 branch is bilinearly upsampled to tap-2 resolution before
    the element-wise sum; logits are upsampled to the input extent.
    """

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE):
        cfg.backbone.validate()
        cfg.model.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg.backbone, cfg.in_channels, rng=rng, num_stages=3, dtype=dtype)
        c2, c3 = cfg.backbone.stage_channels[1], cfg.backbone.stage_channels[2]
        width = cfg.model.fusion_width or c2
        self.fusion_width = width
        self.pam2 = PositionAttentionModule(rng, c2, dtype=dtype)
        self.pam3 = PositionAttentionModule(rng, c3, dtype=dtype)
        self.fuse2 = Conv2d(rng, c2, width, 1, gain=1.0, dtype=dtype)
        self.fuse3 = Conv2d(rng, c3, width, 1, gain=1.0, dtype=dtype)
        self.classifier = Conv2d(rng, width, cfg.model.num_classes, 1, gain=1.0, dtype=dtype)

    @property
    def num_classes(self) -> int:
        return self.cfg.model.num_classes

    def forward(self, x: Tensor, use_attention: bool = True) -> Tensor:
        """Raw per-pixel logits N x K x H x W.

        ``use_attention=False`` deletes both attention modules from the graph
        (the ablated network); it is not a training switch.
        """
        taps = self.backbone(x)
        f2, f3 = taps.tap2, taps.tap3
        if use_attention:
            f2, f3 = self.pam2(f2), self.pam3(f3)
        f2, f3 = self.fuse2(f2), self.fuse3(f3)
        h2, w2 = f2.shape[2:]
        if f3.shape[2:] != (h2, w2):
            f3 = T.bilinear_upsample(f3, h2, w2)
        logits = self.classifier(T.add(f2, f3))
        h, w = x.shape[2:]
        if logits.shape[2:] != (h, w):
            logits = T.bilinear_upsample(logits, h, w)
        return logits

    def alphas(self) -> list:
        return [self.pam2.alpha, self.pam3.alpha]


def rednet_forward(m: ReDNet, x: Tensor) -> Tensor:
    return m(x)


def decode(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over axis 1; ties resolve to the lowest class index."""
    return np.argmax(logits, axis=1).astype(np.int64)


def predict(m: ReDNet, x: Tensor) -> np.ndarray:
    was_training = m.training
    m.eval()
    try:
        return decode(m(x).data)
    finally:
        m.train(was_training)
