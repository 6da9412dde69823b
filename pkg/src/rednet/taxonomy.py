"""Raw annotation labels, the merged evaluation classes, and the raw -> merged map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

RAW_LABELS = (
    "unlabeled",
    "debris",
    "water",
    "building-no-damage",
    "building-medium-damage",
    "building-major-damage",
    "building-total-destruction",
    "vehicle",
    "road",
    "tree",
    "sand",
)

MERGED_LABELS = (
    "unlabeled",
    "debris",
    "water",
    "building-not-totally-destroyed",
    "building-totally-destroyed",
    "vehicle",
    "road",
    "tree",
    "sand",
)

IGNORE_INDEX = 0

# the three standing-building levels collapse into one class
_MERGE = {
    "unlabeled": "unlabeled",
    "debris": "debris",
    "water": "water",
    "building-no-damage": "building-not-totally-destroyed",
    "building-medium-damage": "building-not-totally-destroyed",
    "building-major-damage": "building-not-totally-destroyed",
    "building-total-destruction": "building-totally-destroyed",
    "vehicle": "vehicle",
    "road": "road",
    "tree": "tree",
    "sand": "sand",
}

PALETTE = (
    (0, 0, 0),
    (255, 0, 0),
    (0, 0, 255),
    (180, 120, 120),
    (160, 150, 20),
    (255, 0, 255),
    (140, 140, 140),
    (0, 255, 0),
    (255, 255, 0),
)


@dataclass(frozen=True)
class ClassTaxonomy:
    raw_labels: tuple = RAW_LABELS
    merged_labels: tuple = MERGED_LABELS
    ignore_index: int = IGNORE_INDEX
    palette: tuple = PALETTE

    @property
    def merge_map(self) -> np.ndarray:
        """Lookup table: raw index -> merged index."""
        return np.array([self.merged_labels.index(_MERGE[name]) for name in self.raw_labels], dtype=np.uint8)

    @property
    def evaluated_labels(self) -> tuple:
        return tuple(n for i, n in enumerate(self.merged_labels) if i != self.ignore_index)

    @property
    def num_classes(self) -> int:
        return len(self.merged_labels)

    def merged_index(self, name: str) -> int:
        return self.merged_labels.index(name)

    def raw_index(self, name: str) -> int:
        return self.raw_labels.index(name)


TAXONOMY = ClassTaxonomy()


def merge_labels(raw_mask: np.ndarray, tax: ClassTaxonomy = TAXONOMY, source: str = "<array>") -> np.ndarray:
    raw_mask = np.asarray(raw_mask)
    if raw_mask.size and (raw_mask.min() < 0 or raw_mask.max() >= len(tax.raw_labels)):
        bad = int(raw_mask.max() if raw_mask.max() >= len(tax.raw_labels) else raw_mask.min())
        raise DataError(f"{source}: raw label {bad} outside 0..{len(tax.raw_labels) - 1}")
    return tax.merge_map[raw_mask.astype(np.int64)]


def colorize(mask: np.ndarray, tax: ClassTaxonomy = TAXONOMY) -> np.ndarray:
    """H x W merged indices -> H x W x 3 uint8 palette image."""
    return np.asarray(tax.palette, dtype=np.uint8)[mask]


def canonical_raw(mask: np.ndarray, tax: ClassTaxonomy = TAXONOMY) -> np.ndarray:
    """Merged indices -> the first raw index mapping to each class (inverse of the merge on its image)."""
    merge = tax.merge_map
    inverse = np.array([int(np.flatnonzero(merge == k)[0]) for k in range(len(tax.merged_labels))], dtype=np.uint8)
    return inverse[np.asarray(mask, dtype=np.int64)]
