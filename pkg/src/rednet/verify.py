"""
Oracle-backed verification suites behind ``rednet verify``.

Each check yields a :class:`Check` row; a suite passes iff every row passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np

from . import oracles
from . import tensor as T
from .attention import PositionAttentionModule, attention_map
from .backbone import BackboneConfig
from .metrics import ConfusionMatrix, mean_iou, per_class_iou
from .model import ModelConfig, NetworkConfig, ReDNet
from .tensor import Tensor
from .trainer import cross_entropy_loss

F64 = np.float64
GRAD_TOL = 1e-4
E2E_GRAD_TOL = 1e-3
# published per-class IoU row (percent) and the mean printed beside it
REFERENCE_CLASS_IOU = [92.66, 95.80, 92.16, 83.01, 57.3, 89.78, 96.41, 96.46]
REFERENCE_MIOU = 87.95


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str
    seed: int | None = None


def _leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _random_pam(rng, c, alpha=None) -> PositionAttentionModule:
    pam = PositionAttentionModule(rng, c, dtype=F64)
    pam.alpha.data = np.array([rng.uniform(-1, 1) if alpha is None else alpha], dtype=F64)
    return pam


def tiny_network() -> NetworkConfig:
    return NetworkConfig(
        backbone=BackboneConfig(stem_channels=4, stage_channels=[4, 4, 4, 4], blocks_per_stage=[1, 1, 1, 1],
                                stage_strides=[1, 2, 2, 1]),
        model=ModelConfig(num_classes=5),
    )


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _op_cases() -> dict[str, Callable[[np.random.Generator], tuple[Callable[[], Tensor], list]]]:
    """name -> builder(rng) returning (scalar function, leaves); shapes are drawn from rng."""

    def dims(rng, n, lo=1, hi=5):
        return tuple(int(v) for v in rng.integers(lo, hi + 1, size=n))

    def probe(out_shape, rng):
        # random linear read-out so every output entry carries weight
        return Tensor(rng.standard_normal(out_shape))

    def matmul(rng):
        m, k, n = dims(rng, 3)
        a, b = _leaf(rng, (m, k)), _leaf(rng, (k, n))
        wr = probe((m, n), rng)
        return (lambda: T.sum_all(T.mul(T.matmul(a, b), wr))), [a, b]

    def conv3(rng):
        n, cin, cout = dims(rng, 3, 1, 3)
        h, w = dims(rng, 2, 3, 6)
        stride = int(rng.integers(1, 3))
        x, wt, b = _leaf(rng, (n, cin, h, w)), _leaf(rng, (cout, cin, 3, 3)), _leaf(rng, (cout,))
        wr = probe(T.conv2d(Tensor(x.data), Tensor(wt.data), stride=stride, pad=1).shape, rng)
        return (lambda: T.sum_all(T.mul(T.conv2d(x, wt, b, stride=stride, pad=1), wr))), [x, wt, b]

    def conv1(rng):
        n, cin, cout, h, w = dims(rng, 5, 1, 4)
        x, wt = _leaf(rng, (n, cin, h, w)), _leaf(rng, (cout, cin, 1, 1))
        wr = probe((n, cout, h, w), rng)
        return (lambda: T.sum_all(T.mul(T.conv2d(x, wt), wr))), [x, wt]

    def softmax(rng):
        r, c = dims(rng, 2, 1, 6)
        e = _leaf(rng, (r, c))
        wr = probe((r, c), rng)
        return (lambda: T.sum_all(T.mul(T.softmax_rows(e), wr))), [e]

    def upsample(rng):
        c, h, w = dims(rng, 3, 1, 3)
        oh, ow = h + int(rng.integers(0, 5)), w + int(rng.integers(0, 5))
        x = _leaf(rng, (1, c, h, w))
        wr = probe((1, c, oh, ow), rng)
        return (lambda: T.sum_all(T.mul(T.bilinear_upsample(x, oh, ow), wr))), [x]

    def pointwise(rng):
        shape = dims(rng, 2)
        a, b, s = _leaf(rng, shape), _leaf(rng, shape), _leaf(rng, (1,))
        wr = probe(shape, rng)
        return (lambda: T.sum_all(T.mul(T.relu(T.add(T.mul(a, b), T.scale(a, s))), wr))), [a, b, s]

    def rearrange(rng):
        p, q, r = dims(rng, 3, 1, 4)
        x = _leaf(rng, (p, q, r))
        wr = probe((r, p * q), rng)
        return (lambda: T.sum_all(T.mul(T.transpose2d(T.reshape(x, (p * q, r))), wr))), [x]

    def batch_plumbing(rng):
        n = int(rng.integers(1, 4))
        tail = dims(rng, 2, 1, 3)
        x = _leaf(rng, (n,) + tail)
        order = [int(i) for i in rng.permutation(n)]
        wr = probe((n,) + tail, rng)
        return (lambda: T.mean_all(T.mul(T.concat([T.select(x, i) for i in order]), wr))), [x]

    def batch_norm(rng):
        n, c = dims(rng, 2, 1, 3)
        h, w = dims(rng, 2, 2, 3)
        x, g, b = _leaf(rng, (n, c, h, w)), _leaf(rng, (c,)), _leaf(rng, (c,))
        wr = probe((n, c, h, w), rng)
        return (lambda: T.sum_all(T.mul(T.BatchNorm2d.apply(x, g, b), wr))), [x, g, b]

    def cross_entropy(rng):
        n, h, w = dims(rng, 3, 1, 3)
        k = int(rng.integers(2, 6))
        x = _leaf(rng, (n, k, h, w))
        labels = rng.integers(0, k, size=(n, h, w))
        labels[0, 0, 0] = 1
        return (lambda: cross_entropy_loss(x, labels, ignore_index=0)), [x]

    def pam(rng):
        c, h, w = dims(rng, 3, 1, 4)
        n = int(rng.integers(1, 3))
        a = _leaf(rng, (n, c, h, w))
        module = _random_pam(rng, c)
        return (lambda: T.mean_all(module(a))), [a] + module.parameters()

    return {
        "matmul": matmul,
        "conv2d_3x3": conv3,
        "conv2d_1x1": conv1,
        "softmax_rows": softmax,
        "bilinear_upsample": upsample,
        "add/mul/scale/relu": pointwise,
        "reshape/transpose2d": rearrange,
        "select/concat/mean": batch_plumbing,
        "batch_norm": batch_norm,
        "cross_entropy": cross_entropy,
        "position_attention": pam,
    }


OP_CASES = _op_cases()


def op_gradient_error(name: str, seed: int) -> float:
    f, leaves = OP_CASES[name](np.random.default_rng(seed))
    return T.check_gradients(f, leaves)


def end_to_end_gradient_error(seed: int = 0, side: int = 16) -> float:
    rng = np.random.default_rng(seed)
    model = ReDNet(tiny_network(), seed=seed, dtype=F64)
    for alpha in model.alphas():
        alpha.data = np.array([rng.uniform(0.3, 1.0)], dtype=F64)
    x = Tensor(rng.standard_normal((1, 3, side, side)))
    labels = rng.integers(0, model.num_classes, size=(1, side, side))
    return T.check_gradients(lambda: cross_entropy_loss(model(x), labels), model.parameters())


def gradient_suite(seeds: int = 5, e2e_seeds: int = 1) -> Iterator[Check]:
    for name in OP_CASES:
        worst, worst_seed = 0.0, None
        for seed in range(seeds):
            err = op_gradient_error(name, seed)
            if err >= worst:
                worst, worst_seed = err, seed
        yield Check("gradients", name, worst < GRAD_TOL, f"max rel err {worst:.2e} (tol {GRAD_TOL:g})", worst_seed)
    worst = max(end_to_end_gradient_error(s) for s in range(e2e_seeds))
    yield Check("gradients", "rednet_end_to_end", worst < E2E_GRAD_TOL, f"max rel err {worst:.2e} (tol {E2E_GRAD_TOL:g})")


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def random_pam_instance(seed: int, max_c: int = 8, max_hw: int = 8):
    rng = np.random.default_rng(seed)
    c, h, w = int(rng.integers(1, max_c + 1)), int(rng.integers(1, max_hw + 1)), int(rng.integers(1, max_hw + 1))
    pam = _random_pam(rng, c)
    a = rng.standard_normal((1, c, h, w))
    return pam, a


def pam_oracle_error(seed: int) -> float:
    pam, a = random_pam_instance(seed)
    got = pam(Tensor(a)).data[0]
    want = oracles.pam_bruteforce(a[0], pam.w_b.data, pam.w_c.data, pam.w_d.data, float(pam.alpha.data[0]))
    return float(np.max(np.abs(got - want) / (np.abs(want) + 1e-9)))


def row_stochastic_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    c, n_side = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    b = rng.standard_normal((1, c, n_side, n_side)) * rng.uniform(0.1, 3)
    cc = rng.standard_normal((1, c, n_side, n_side)) * rng.uniform(0.1, 3)
    s = attention_map(Tensor(b), Tensor(cc)).data
    if s.min() < 0 or s.max() > 1:
        return float("inf")
    return float(np.max(np.abs(s.sum(axis=1) - 1)))


def alpha_zero_is_identity(seed: int) -> bool:
    pam, a = random_pam_instance(seed)
    pam.alpha.data = np.zeros(1, dtype=F64)
    return bool(np.array_equal(pam(Tensor(a)).data, a))


def permutation_error(seed: int) -> float:
    pam, a = random_pam_instance(seed)
    rng = np.random.default_rng(seed + 10_000)
    _, c, h, w = a.shape
    perm = rng.permutation(h * w)

    def permute(t):
        return t.reshape(1, c, h * w)[:, :, perm].reshape(1, c, h, w)

    out_then_perm = permute(pam(Tensor(a)).data)
    perm_then_out = pam(Tensor(permute(a))).data
    return float(np.max(np.abs(out_then_perm - perm_then_out)))


def attention_suite(seeds: int = 100) -> Iterator[Check]:
    worst = max(pam_oracle_error(s) for s in range(seeds))
    yield Check("attention", "brute_force_oracle", worst < 1e-6, f"{seeds} instances, max rel err {worst:.2e}")
    worst = max(row_stochastic_error(s) for s in range(seeds))
    yield Check("attention", "row_stochastic", worst <= 1e-6, f"{seeds} seeds, max |row sum - 1| {worst:.2e}")
    failures = [s for s in range(seeds) if not alpha_zero_is_identity(s)]
    yield Check("attention", "alpha_zero_identity", not failures, f"{seeds} seeds, {len(failures)} failures",
                failures[0] if failures else None)
    errs = [permutation_error(s) for s in range(seeds)]
    bad = [s for s, e in enumerate(errs) if e > 1e-10]
    yield Check("attention", "permutation_equivariance", not bad, f"{seeds} seeds, max abs err {max(errs):.2e}",
                bad[0] if bad else None)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metrics_oracle_mismatch(seed: int) -> float:
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 10))
    h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    gt = rng.integers(0, k, size=(h, w))
    pred = rng.integers(0, k, size=(h, w))
    ignore = 0 if rng.random() < 0.5 else None
    cm = ConfusionMatrix(k, ignore).accumulate(gt, pred)
    got = per_class_iou(cm)
    want = oracles.iou_bruteforce(gt, pred, k, ignore)
    worst = 0.0
    for g, o in zip(got, want):
        if (g is None) != (o is None):
            return float("inf")
        if g is not None:
            worst = max(worst, abs(Fraction(g) - o))
    want_mean = oracles.mean_bruteforce(want)
    if want_mean is None:
        return worst
    return float(max(worst, abs(Fraction(mean_iou(got)) - want_mean)))


def metrics_suite(seeds: int = 1000) -> Iterator[Check]:
    agg = mean_iou(REFERENCE_CLASS_IOU)
    yield Check("metrics", "reference_row_mean", abs(agg - REFERENCE_MIOU) <= 0.01,
                f"mean {agg:.4f} vs reported {REFERENCE_MIOU}")
    worst = max(metrics_oracle_mismatch(s) for s in range(seeds))
    yield Check("metrics", "brute_force_iou", worst <= 1e-12, f"{seeds} mask pairs, max abs err {worst:.2e}")


SUITES = {"gradients": gradient_suite, "attention": attention_suite, "metrics": metrics_suite}


def run_suites(names: list[str]) -> list[Check]:
    rows: list[Check] = []
    for name in names:
        rows.extend(SUITES[name]())
    return rows


def format_table(rows: list[Check]) -> str:
    width = max(len(r.name) for r in rows)
    lines = []
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        seed = "" if r.seed is None or r.passed else f" [seed {r.seed}]"
        lines.append(f"{status}  {r.suite:<10} {r.name:<{width}}  {r.detail}{seed}")
    return "\n".join(lines)
