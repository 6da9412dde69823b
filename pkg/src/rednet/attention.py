"""
Position attention over all pairs of spatial positions of a feature map.

Three 1x1 projections B, C, D keep the input channel count. The attention
map S (N x N, N = H*W) has entry ``s[j, i] = exp(B_i . C_j) / sum_i exp(B_i . C_j)``
and the output is ``alpha * (D S^T) + A`` reshaped back to C x H x W.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Module, fan_in_uniform
from .tensor import Parameter, Tensor


class PositionAttentionModule(Module):
    def __init__(self, rng: np.random.Generator, channels: int, dtype=T.DEFAULT_DTYPE):
        if channels < 1:
            raise DimensionError(f"attention needs at least one channel, got {channels}")
        self.channels = channels
        shape = (channels, channels, 1, 1)
        self.w_b = Parameter(fan_in_uniform(rng, shape, dtype=dtype))
        self.w_c = Parameter(fan_in_uniform(rng, shape, dtype=dtype))
        self.w_d = Parameter(fan_in_uniform(rng, shape, dtype=dtype))
        # starts as the identity map; training opens the attention branch
        self.alpha = Parameter(np.zeros(1, dtype=dtype))

    def project(self, a: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if a.ndim != 4 or a.shape[1] != self.channels:
            raise DimensionError(f"attention expects N x {self.channels} x H x W input, got {a.shape}")
        return (T.conv2d(a, self.w_b), T.conv2d(a, self.w_c), T.conv2d(a, self.w_d))

    def forward(self, a: Tensor) -> Tensor:
        b, c, d = self.project(a)
        if a.shape[0] == 1:
            return self._forward_one(a, b, c, d)
        outs = [
            self._forward_one(T.select(a, n), T.select(b, n), T.select(c, n), T.select(d, n))
            for n in range(a.shape[0])
        ]
        return T.concat(outs)

    def _forward_one(self, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
        _, ch, h, w = a.shape
        s = attention_map(b, c)
        d_flat = T.reshape(d, (ch, h * w))
        mixed = T.matmul(d_flat, T.transpose2d(s))
        return T.add(T.scale(T.reshape(mixed, a.shape), self.alpha), a)


def attention_map(b: Tensor, c: Tensor) -> Tensor:
    """Row-stochastic N x N map for a single sample; row j is normalised over i."""
    if b.shape != c.shape:
        raise DimensionError(f"attention_map: B {b.shape} and C {c.shape} differ")
    if b.ndim == 4:
        if b.shape[0] != 1:
            raise DimensionError(f"attention_map works per sample, got batch of {b.shape[0]}")
        ch, n = b.shape[1], b.shape[2] * b.shape[3]
    elif b.ndim == 3:
        ch, n = b.shape[0], b.shape[1] * b.shape[2]
    else:
        raise DimensionError(f"attention_map expects C x H x W features, got {b.shape}")
    b_flat = T.reshape(b, (ch, n))
    c_flat = T.reshape(c, (ch, n))
    # energy[i, j] = B_i . C_j
    energy = T.matmul(T.transpose2d(b_flat), c_flat)
    return T.softmax_rows(T.transpose2d(energy))


def pam_forward(pam: PositionAttentionModule, a: Tensor) -> Tensor:
    return pam(a)
