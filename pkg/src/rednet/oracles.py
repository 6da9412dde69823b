"""
Independent reference implementations used by the verification suites.

These deliberately avoid the tensor engine: explicit Python loops, scalar
exponentials and exact rational arithmetic.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Optional

import numpy as np


def pam_bruteforce(a: np.ndarray, w_b: np.ndarray, w_c: np.ndarray, w_d: np.ndarray, alpha: float) -> np.ndarray:
    """Position attention for one C x H x W map by looping over every position pair."""
    c, h, w = a.shape
    n = h * w
    cols = [a[:, p // w, p % w] for p in range(n)]
    wb, wc, wd = (k.reshape(c, c) for k in (w_b, w_c, w_d))

    def mix(kernel, v):
        return [sum(kernel[o, i] * v[i] for i in range(c)) for o in range(c)]

    bs = [mix(wb, v) for v in cols]
    cs = [mix(wc, v) for v in cols]
    ds = [mix(wd, v) for v in cols]
    out = np.empty_like(a, dtype=np.float64)
    for j in range(n):
        energies = [sum(bs[i][ch] * cs[j][ch] for ch in range(c)) for i in range(n)]
        weights = [math.exp(e) for e in energies]
        total = sum(weights)
        s_j = [wt / total for wt in weights]
        for ch in range(c):
            attended = sum(s_j[i] * ds[i][ch] for i in range(n))
            out[ch, j // w, j % w] = alpha * attended + cols[j][ch]
    return out


def attention_map_bruteforce(b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``s[j, i] = exp(B_i . C_j) / sum_i exp(B_i . C_j)`` for C x N inputs."""
    ch, n = b.shape
    s = np.empty((n, n))
    for j in range(n):
        e = [math.exp(sum(b[k, i] * c[k, j] for k in range(ch))) for i in range(n)]
        tot = sum(e)
        for i in range(n):
            s[j, i] = e[i] / tot
    return s


def iou_bruteforce(gt: np.ndarray, pred: np.ndarray, num_classes: int, ignore_index: Optional[int]) -> list:
    """Exact per-class IoU via pixel-coordinate sets; ``None`` where undefined."""
    coords = [idx for idx in np.ndindex(gt.shape) if ignore_index is None or gt[idx] != ignore_index]
    out = []
    for k in range(num_classes):
        if k == ignore_index:
            out.append(None)
            continue
        g = {p for p in coords if gt[p] == k}
        q = {p for p in coords if pred[p] == k}
        union = g | q
        out.append(Fraction(len(g & q), len(union)) if union else None)
    return out


def mean_bruteforce(values: list) -> Optional[Fraction]:
    present = [Fraction(v) for v in values if v is not None]
    return sum(present, Fraction(0)) / len(present) if present else None


def conv2d_bruteforce(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Sliding-window cross-correlation, one output value at a time."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[b, :, y * stride : y * stride + k, xx * stride : xx * stride + k]
                    out[b, o, y, xx] = float((patch * w[o]).sum())
    return out
