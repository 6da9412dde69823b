"""Parameter containers: a small Module base plus convolution and batch-norm layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Tree of named parameters and buffers, discovered from attributes in definition order."""

    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (e.g. running statistics), keyed by attribute name."""
        return {}

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.buffers().items():
            yield f"{prefix}{name}", arr
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        if not rest:
            setattr(self, head, value)
            return
        child = getattr(self, head)
        if isinstance(child, (list, tuple)):
            idx, _, rest = rest.partition(".")
            child = child[int(idx)]
        child.set_buffer(rest, value)

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (e.g. float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for name, arr in list(self.named_buffers()):
            self.set_buffer(name, arr.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def fan_in_uniform(rng: np.random.Generator, shape: tuple, gain: float = 1.0, dtype=T.DEFAULT_DTYPE) -> np.ndarray:
    """Uniform(-b, b) with b = gain * sqrt(3 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        cin: int,
        cout: int,
        k: int,
        stride: int = 1,
        bias: bool = True,
        gain: float = np.sqrt(2.0),
        dtype=T.DEFAULT_DTYPE,
    ):
        self.stride = stride
        self.pad = k // 2
        self.weight = Parameter(fan_in_uniform(rng, (cout, cin, k, k), gain, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    """Batch statistics while training, running averages in evaluation."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=T.DEFAULT_DTYPE):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            fn = T.BatchNorm2d(x, self.gamma, self.beta)
            out = fn.forward(x.data, self.gamma.data, self.beta.data, eps=self.eps)
            m = self.momentum
            n = x.data.size // x.shape[1]
            unbiased = fn.batch_var * (n / max(n - 1, 1))
            self.running_mean = ((1 - m) * self.running_mean + m * fn.batch_mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
            requires_grad = x.requires_grad or self.gamma.requires_grad
            return Tensor(out, requires_grad=requires_grad, _node=fn if requires_grad else None)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = self.gamma * Tensor(inv.astype(x.dtype))
        shift = self.beta + Tensor((-self.running_mean * inv).astype(x.dtype)) * self.gamma
        return T.ChannelAffine.apply(x, scale, shift)
