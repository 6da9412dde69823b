"""Confusion-matrix accumulation, per-class IoU and mean IoU (corpus-level)."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import DataError, MetricError
from .taxonomy import TAXONOMY, ClassTaxonomy


class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns are predictions.

    Pixels whose ground truth equals ``ignore_index`` are never counted.
    """

    def __init__(self, num_classes: int, ignore_index: Optional[int] = None):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, gt: np.ndarray, pred: np.ndarray) -> "ConfusionMatrix":
        gt, pred = np.asarray(gt), np.asarray(pred)
        if gt.shape != pred.shape:
            raise DataError(f"ground truth extent {gt.shape} != prediction extent {pred.shape}")
        k = self.num_classes
        for name, arr in (("ground truth", gt), ("prediction", pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise DataError(f"{name} holds class indices outside 0..{k - 1}")
        gt = gt.reshape(-1).astype(np.int64)
        pred = pred.reshape(-1).astype(np.int64)
        if self.ignore_index is not None:
            keep = gt != self.ignore_index
            gt, pred = gt[keep], pred[keep]
        self.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    @property
    def pixels(self) -> int:
        return int(self.counts.sum())

    def per_class_iou(self) -> list[Optional[float]]:
        return per_class_iou(self)


def per_class_iou(cm: ConfusionMatrix) -> list[Optional[float]]:
    """IoU_k = TP / (TP + FP + FN); ``None`` for vacuous classes and the ignore index."""
    c = cm.counts
    tp = np.diag(c)
    denom = c.sum(axis=1) + c.sum(axis=0) - tp
    out: list[Optional[float]] = []
    for k in range(cm.num_classes):
        if k == cm.ignore_index or denom[k] == 0:
            out.append(None)
        else:
            out.append(float(tp[k]) / float(denom[k]))
    return out


def mean_iou(per_class: Sequence[Optional[float]]) -> float:
    present = [v for v in per_class if v is not None]
    if not present:
        raise MetricError("mean IoU is undefined: no class is present in ground truth or prediction")
    return float(sum(present) / len(present))


def report(cm: ConfusionMatrix, tax: ClassTaxonomy = TAXONOMY) -> dict:
    """JSON-ready report keyed by the evaluated (non-ignored) class names."""
    ious = per_class_iou(cm)
    per_class = {name: ious[i] for i, name in enumerate(tax.merged_labels) if i != tax.ignore_index}
    return {"per_class": per_class, "miou": mean_iou(list(per_class.values())), "pixels": cm.pixels}
