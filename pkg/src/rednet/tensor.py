"""
Minimal dense tensor with tape-based reverse-mode differentiation.

Only the operator set needed by the segmentation network is provided:
matmul, conv2d, row softmax, bilinear upsampling, pointwise add/mul/relu/scale,
reshape, 2-D transpose, reductions, batch slicing/stacking and batch norm.
There is no general broadcasting.

Each differentiable operation is a :class:`Function` subclass. ``Function.apply``
runs the forward pass on raw numpy arrays and links the output tensor to the
node that produced it; those links form the computation tape. ``Tensor.backward``
replays the tape in reverse topological order and then releases it.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    """Dense N-d array with an optional gradient buffer.

    Floating arrays keep their dtype; anything else is converted to
    ``DEFAULT_DTYPE``. ``grad`` is filled for leaf tensors that require
    gradients once a backward pass reaches them.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, _node: Optional["Function"] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        _check_finite(arr, "tensor construction")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = _node

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # -- differentiation --------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from this tensor to every reachable leaf.

        Without an explicit ``grad`` the tensor must hold a single value.
        The tape is cleared afterwards, so a second call needs a new forward.
        """
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            node = t._node
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                _check_finite(ig, f"{type(node).__name__}.backward")
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig
        for t in order:
            if t._node is not None:
                t._node.release()
                t._node = None


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


class Parameter(Tensor):
    """A leaf tensor that always requires gradients."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Function:
    """One recorded operation on the tape.

    Subclasses implement ``forward`` on numpy arrays (saving whatever the
    backward rule needs on ``self``) and ``backward`` returning one gradient
    per tensor input (``None`` where no gradient flows).
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    def release(self) -> None:
        self.__dict__.clear()

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        for t in inputs:
            if not isinstance(t, Tensor):
                raise UsageError(f"{cls.__name__} expects Tensor inputs, got {type(t).__name__}")
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        _check_finite(out, cls.__name__)
        requires_grad = any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, _node=fn if requires_grad else None)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Add(Function):
    def forward(self, a, b):
        _same_shape(a, b, "add")
        return a + b

    def backward(self, grad):
        return grad, grad


class Mul(Function):
    def forward(self, a, b):
        _same_shape(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    """Multiply a tensor by a single-element tensor (e.g. a learnable gate)."""

    def forward(self, x, s):
        if s.size != 1:
            raise DimensionError(f"scale: factor must hold one value, got shape {s.shape}")
        self.x, self.s = x, s
        return x * s.reshape(())

    def backward(self, grad):
        ds = np.asarray(np.sum(grad * self.x), dtype=self.s.dtype).reshape(self.s.shape)
        return grad * self.s.reshape(()), ds


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def scale(x: Tensor, s: Tensor) -> Tensor:
    return Scale.apply(x, s)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


# ---------------------------------------------------------------------------
# linear algebra and rearrangement
# ---------------------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Reshape(Function):
    def forward(self, x, shape):
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != x.size:
            raise DimensionError(f"reshape: cannot view {x.shape} ({x.size} values) as {shape}")
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose2d(Function):
    def forward(self, x):
        if x.ndim != 2:
            raise DimensionError(f"transpose2d expects a 2-D tensor, got {x.shape}")
        return x.T

    def backward(self, grad):
        return (grad.T,)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=shape)


def transpose2d(x: Tensor) -> Tensor:
    return Transpose2d.apply(x)


# ---------------------------------------------------------------------------
# reductions and batch plumbing
# ---------------------------------------------------------------------------


class Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.in_shape, grad, dtype=grad.dtype),)


class Mean(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        n = int(np.prod(self.in_shape))
        return (np.full(self.in_shape, grad / n, dtype=grad.dtype),)


class Select(Function):
    """Pick sample ``index`` along the leading axis, keeping it as size 1."""

    def forward(self, x, index):
        if not 0 <= index < x.shape[0]:
            raise DimensionError(f"select: index {index} out of range for leading extent {x.shape[0]}")
        self.in_shape, self.index = x.shape, index
        return x[index : index + 1].copy()

    def backward(self, grad):
        g = np.zeros(self.in_shape, dtype=grad.dtype)
        g[self.index : self.index + 1] = grad
        return (g,)


class Concat(Function):
    """Concatenate along the leading axis."""

    def forward(self, *xs):
        tails = {x.shape[1:] for x in xs}
        if len(tails) != 1:
            raise DimensionError(f"concat: trailing shapes differ: {sorted(tails)}")
        self.sizes = [x.shape[0] for x in xs]
        return np.concatenate(xs, axis=0)

    def backward(self, grad):
        bounds = np.cumsum([0] + self.sizes)
        return tuple(grad[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


def sum_all(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean_all(x: Tensor) -> Tensor:
    return Mean.apply(x)


def select(x: Tensor, index: int) -> Tensor:
    return Select.apply(x, index=index)


def concat(xs: Sequence[Tensor]) -> Tensor:
    if len(xs) == 1:
        return xs[0]
    return Concat.apply(*xs)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


class SoftmaxRows(Function):
    def forward(self, e):
        if e.ndim != 2:
            raise DimensionError(f"softmax_rows expects a 2-D tensor, got {e.shape}")
        shifted = e - e.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        self.s = ex / ex.sum(axis=1, keepdims=True)
        return self.s

    def backward(self, grad):
        s = self.s
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)


def softmax_rows(e: Tensor) -> Tensor:
    """Normalise each row with a max-shifted softmax."""
    return SoftmaxRows.apply(e)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_output_extent(n: int, k: int, stride: int, pad: int) -> int:
    """Floor convention: trailing positions that do not fill a whole stride are dropped."""
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    span = n + 2 * pad - k
    if span < 0:
        raise DimensionError(f"conv2d: {k}x{k} kernel does not fit extent {n} with pad {pad}")
    return span // stride + 1


class Conv2d(Function):
    """Cross-correlation of an NCHW batch with an (Cout, Cin, k, k) kernel."""

    def forward(self, x, w, b=None, stride=1, pad=0):
        if x.ndim != 4 or w.ndim != 4:
            raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
        n, cin, h, wd = x.shape
        cout, wcin, k, k2 = w.shape
        if wcin != cin:
            raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
        if k != k2 or k not in (1, 3):
            raise DimensionError(f"conv2d: kernel must be square 1x1 or 3x3, got {k}x{k2}")
        if b is not None and b.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {b.shape} != ({cout},)")
        ho = conv_output_extent(h, k, stride, pad)
        wo = conv_output_extent(wd, k, stride, pad)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
        w2 = w.reshape(cout, -1)
        out = cols @ w2.T
        if b is not None:
            out = out + b
        self.cols, self.w, self.has_bias = cols, w, b is not None
        self.geom = (x.shape, xp.shape, stride, pad, ho, wo)
        return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x_shape, xp_shape, stride, pad, ho, wo = self.geom
        n, cin, h, wd = x_shape
        cout, _, k, _ = self.w.shape
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (g2.T @ self.cols).reshape(self.w.shape)
        db = g2.sum(axis=0) if self.has_bias else None
        dcols = (g2 @ self.w.reshape(cout, -1)).reshape(n, ho, wo, cin, k, k)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        if self.has_bias:
            return dx, dw, db
        return dx, dw


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    if bias is None:
        return Conv2d.apply(x, w, stride=stride, pad=pad)
    return Conv2d.apply(x, w, bias, stride=stride, pad=pad)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear resampling weights (n_out x n_in), half-pixel centres, clamped.

    Source coordinate for output index ``o`` is ``(o + 0.5) * n_in / n_out - 0.5``.
    """
    if n_in <= 0 or n_out <= 0:
        raise DimensionError(f"interpolation extents must be positive, got {n_in} -> {n_out}")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m.astype(dtype)


class BilinearUpsample(Function):
    def forward(self, x, out_h, out_w):
        if x.ndim != 4:
            raise DimensionError(f"bilinear_upsample expects NCHW input, got {x.shape}")
        if out_h <= 0 or out_w <= 0:
            raise DimensionError(f"bilinear_upsample: zero output extent {out_h}x{out_w}")
        h, w = x.shape[2:]
        if out_h < h or out_w < w:
            raise DimensionError(f"bilinear_upsample: output {out_h}x{out_w} smaller than input {h}x{w}")
        self.ry = interpolation_matrix(h, out_h, x.dtype)
        self.rx = interpolation_matrix(w, out_w, x.dtype)
        return self.ry @ x @ self.rx.T

    def backward(self, grad):
        return (self.ry.T @ grad @ self.rx,)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    return BilinearUpsample.apply(x, out_h=out_h, out_w=out_w)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


class BatchNorm2d(Function):
    """Batch-statistics normalisation over (N, H, W) with affine gamma/beta."""

    def forward(self, x, gamma, beta, eps=1e-5):
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise DimensionError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        self.xhat, self.inv, self.gamma = xhat, inv, gamma
        self.batch_mean, self.batch_var = mu.reshape(c), var.reshape(c)
        return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    def backward(self, grad):
        c = grad.shape[1]
        m = grad.size // c
        dbeta = grad.sum(axis=(0, 2, 3))
        dgamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        gx = grad * self.gamma.reshape(1, c, 1, 1)
        dx = (self.inv / m) * (
            m * gx - gx.sum(axis=(0, 2, 3), keepdims=True) - self.xhat * (gx * self.xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return dx, dgamma, dbeta


class ChannelAffine(Function):
    """y = x * scale[c] + shift[c]; used by batch norm in evaluation mode."""

    def forward(self, x, scale, shift):
        c = x.shape[1]
        self.x, self.scale = x, scale
        return x * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)

    def backward(self, grad):
        c = grad.shape[1]
        return (
            grad * self.scale.reshape(1, c, 1, 1),
            (grad * self.x).sum(axis=(0, 2, 3)),
            grad.sum(axis=(0, 2, 3)),
        )


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def check_gradients(f: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare backprop against central differences at 64-bit precision.

    ``f`` rebuilds the graph from the current leaf values and returns a
    single-element tensor. Returns
    ``max |analytic - numeric| / max(1, |numeric|)`` over every leaf entry.
    """
    for leaf in leaves:
        if leaf.dtype != np.float64:
            raise UsageError(f"gradient checks require float64 leaves, got {leaf.dtype}")
    for leaf in leaves:
        leaf.data = np.ascontiguousarray(leaf.data)
        leaf.grad = None
    out = f()
    if out.data.size != 1:
        raise UsageError(f"check_gradients needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        flat = leaf.data.reshape(-1)
        a_flat = analytic.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = float(f().data)
            flat[idx] = orig - eps
            fm = float(f().data)
            flat[idx] = orig
            numeric = (fp - fm) / (2 * eps)
            err = abs(a_flat[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
