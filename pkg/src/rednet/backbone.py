"""
Miniature residual backbone with four stages, exposing stage-2 and stage-3 taps.

Layout: stem (3x3 conv, stride 2, norm, relu) then four stages of basic
residual blocks (two 3x3 convs, identity shortcut or 1x1 projection when the
shape changes). Stage ``k`` applies its stride in the first block only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor

STEM_STRIDE = 2


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 64])
    blocks_per_stage: list = field(default_factory=lambda: [1, 1, 1, 1])
    stage_strides: list = field(default_factory=lambda: [1, 2, 2, 1])
    norm: str = "none"

    def validate(self) -> None:
        for name in ("stage_channels", "blocks_per_stage", "stage_strides"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)) or len(value) != 4:
                raise ConfigError(f"backbone.{name} must list exactly 4 values, got {value!r}")
        if self.stem_channels < 1 or any(c < 1 for c in self.stage_channels):
            raise ConfigError("backbone channel counts must be >= 1")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"backbone.blocks_per_stage must be >= 1 per stage, got {self.blocks_per_stage}")
        if any(s not in (1, 2) for s in self.stage_strides):
            raise ConfigError(f"backbone.stage_strides must be 1 or 2, got {self.stage_strides}")
        if self.norm not in ("none", "batch"):
            raise ConfigError(f"backbone.norm must be 'none' or 'batch', got {self.norm!r}")

    def tap_stride(self, stage: int) -> int:
        """Total downsampling factor at the output of ``stage`` (1-based)."""
        return STEM_STRIDE * int(np.prod(self.stage_strides[:stage]))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, (list, tuple)) else v for k, v in asdict(self).items()}


@dataclass
class BackboneOutput:
    tap2: Tensor
    tap3: Tensor
    tap4: Optional[Tensor] = None


class ConvNorm(Module):
    """3x3 (or 1x1) conv followed by optional batch norm; bias only without norm."""

    def __init__(self, rng, cin, cout, k, stride, norm, gain=np.sqrt(2.0), dtype=T.DEFAULT_DTYPE):
        self.conv = Conv2d(rng, cin, cout, k, stride=stride, bias=norm == "none", gain=gain, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype) if norm == "batch" else None

    def forward(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        return x if self.bn is None else self.bn(x)


class ResidualBlock(Module):
    def __init__(self, rng, cin, cout, stride, norm, dtype=T.DEFAULT_DTYPE):
        self.conv1 = ConvNorm(rng, cin, cout, 3, stride, norm, dtype=dtype)
        # damped second conv keeps the block near identity at init
        self.conv2 = ConvNorm(rng, cout, cout, 3, 1, norm, gain=0.5, dtype=dtype)
        if stride != 1 or cin != cout:
            self.shortcut = ConvNorm(rng, cin, cout, 1, stride, norm, gain=1.0, dtype=dtype)
        else:
            self.shortcut = None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv2(T.relu(self.conv1(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return T.relu(T.add(y, skip))


class Backbone(Module):
    """``num_stages`` < 4 builds only the leading stages (the model never runs stage 4)."""

    def __init__(self, cfg: BackboneConfig, in_channels: int = 3, rng: Optional[np.random.Generator] = None,
                 num_stages: int = 4, dtype=T.DEFAULT_DTYPE):
        cfg.validate()
        if in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {in_channels}")
        if not 3 <= num_stages <= 4:
            raise ConfigError(f"num_stages must be 3 or 4, got {num_stages}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.num_stages = num_stages
        self.stem = ConvNorm(rng, in_channels, cfg.stem_channels, 3, STEM_STRIDE, cfg.norm, dtype=dtype)
        self.stages = []
        cin = cfg.stem_channels
        for s in range(num_stages):
            blocks = []
            for b in range(cfg.blocks_per_stage[s]):
                stride = cfg.stage_strides[s] if b == 0 else 1
                blocks.append(ResidualBlock(rng, cin, cfg.stage_channels[s], stride, cfg.norm, dtype=dtype))
                cin = cfg.stage_channels[s]
            self.stages.append(Stage(blocks))

    def total_stride(self) -> int:
        return self.cfg.tap_stride(self.num_stages)

    def forward(self, x: Tensor) -> BackboneOutput:
        if x.ndim != 4:
            raise DimensionError(f"backbone expects N x C x H x W input, got {x.shape}")
        total = self.total_stride()
        h, w = x.shape[2:]
        if h % total or w % total:
            raise DimensionError(f"input extent {h}x{w} not divisible by backbone stride {total}")
        y = T.relu(self.stem(x))
        taps = []
        for stage in self.stages:
            y = stage(y)
            taps.append(y)
        return BackboneOutput(tap2=taps[1], tap3=taps[2], tap4=taps[3] if len(taps) > 3 else None)


class Stage(Module):
    def __init__(self, blocks: list):
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def build_backbone(cfg: BackboneConfig, in_channels: int = 3, seed: int = 0, **kwargs) -> Backbone:
    return Backbone(cfg, in_channels, rng=np.random.default_rng(seed), **kwargs)
