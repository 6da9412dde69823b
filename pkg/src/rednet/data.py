"""
Samples, manifests, geometric augmentation and resizing.

Images are float32 ``3 x H x W`` arrays in [0, 1]; masks are ``H x W`` uint8
arrays of merged class indices. Geometry is always applied identically to
both: bilinear sampling for the image, nearest neighbour for the mask.
Pixels exposed by a transform become black / ignore.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import netpbm
from .errors import ConfigError, DataError
from .taxonomy import TAXONOMY, ClassTaxonomy, merge_labels
from .tensor import interpolation_matrix

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class SegmentationSample:
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"image must be 3 x H x W, got {self.image.shape}")
        if self.image.shape[1:] != self.mask.shape:
            raise DataError(f"image extent {self.image.shape[1:]} != mask extent {self.mask.shape}")


@dataclass
class DatasetManifest:
    split: str
    entries: list  # (image path, mask path), absolute
    class_set: tuple = TAXONOMY.merged_labels
    version: int = MANIFEST_VERSION

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# manifests and loading
# ---------------------------------------------------------------------------


def write_manifest(path: str | os.PathLike, manifest: DatasetManifest) -> None:
    root = Path(path).resolve().parent
    doc = {
        "version": manifest.version,
        "split": manifest.split,
        "classes": list(manifest.class_set),
        "entries": [
            {"image": os.path.relpath(img, root), "mask": os.path.relpath(msk, root)} for img, msk in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path: str | os.PathLike, tax: ClassTaxonomy = TAXONOMY) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    if doc.get("split") not in SPLITS:
        raise DataError(f"{path}: split must be one of {SPLITS}, got {doc.get('split')!r}")
    if tuple(doc.get("classes", ())) != tax.merged_labels:
        raise DataError(f"{path}: class list does not match the built-in taxonomy")
    root = path.resolve().parent
    entries = []
    for e in doc.get("entries", []):
        img, msk = root / e["image"], root / e["mask"]
        for p in (img, msk):
            if not p.exists():
                raise DataError(f"{path}: referenced file {p} does not exist")
        entries.append((str(img), str(msk)))
    return DatasetManifest(split=doc["split"], entries=entries, class_set=tax.merged_labels)


def load_image(path: str | os.PathLike) -> np.ndarray:
    rgb = netpbm.read(path, kind="ppm")
    return (rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def load_sample(image_path, mask_path, tax: ClassTaxonomy = TAXONOMY) -> SegmentationSample:
    image = load_image(image_path)
    raw = netpbm.read(mask_path, kind="pgm")
    if raw.shape != image.shape[1:]:
        raise DataError(f"{mask_path}: mask extent {raw.shape} != image extent {image.shape[1:]} of {image_path}")
    mask = merge_labels(raw, tax, source=str(mask_path))
    return SegmentationSample(image, mask)


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """3 x H x W floats in [0, 1] -> H x W x 3 uint8 (round half to even)."""
    return np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# shuffling
# ---------------------------------------------------------------------------


def shuffle_epoch(n: int | DatasetManifest, seed: int, epoch: int = 0) -> np.ndarray:
    """Seeded permutation of entry indices, distinct per (seed, epoch)."""
    if isinstance(n, DatasetManifest):
        n = len(n)
    rng = np.random.default_rng([seed, epoch])
    order = np.arange(n)
    rng.shuffle(order)
    return order


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass
class AugmentPolicy:
    enabled: bool = True
    scale_range: Sequence[float] = field(default_factory=lambda: [0.75, 1.25])
    flip_prob: float = 0.5
    rotation_deg: float = 10.0

    def clamped(self) -> "AugmentPolicy":
        lo, hi = (max(float(v), 1e-3) for v in self.scale_range)
        if lo > hi:
            lo, hi = hi, lo
        return AugmentPolicy(
            enabled=self.enabled,
            scale_range=[lo, hi],
            flip_prob=min(max(float(self.flip_prob), 0.0), 1.0),
            rotation_deg=abs(float(self.rotation_deg)),
        )


def warp(sample: SegmentationSample, scale: float, angle_deg: float, ignore_index: int = TAXONOMY.ignore_index) -> SegmentationSample:
    """Scale and rotate about the image centre, keeping the extent (crop/pad)."""
    _, h, w = sample.image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing="ij")
    t = np.deg2rad(angle_deg)
    cos, sin = np.cos(t), np.sin(t)
    # inverse of (rotate by t, then scale)
    sx = (cos * xx + sin * yy) / scale + cx
    sy = (-sin * xx + cos * yy) / scale + cy
    inside = (sx >= -0.5) & (sx < w - 0.5) & (sy >= -0.5) & (sy < h - 0.5)

    nx = np.clip(np.floor(sx + 0.5).astype(np.int64), 0, w - 1)
    ny = np.clip(np.floor(sy + 0.5).astype(np.int64), 0, h - 1)
    mask = np.where(inside, sample.mask[ny, nx], ignore_index).astype(sample.mask.dtype)

    bx = np.clip(sx, 0, w - 1)
    by = np.clip(sy, 0, h - 1)
    x0 = np.floor(bx).astype(np.int64)
    y0 = np.floor(by).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = bx - x0, by - y0
    img = sample.image.astype(np.float64)
    out = (
        img[:, y0, x0] * (1 - fx) * (1 - fy)
        + img[:, y0, x1] * fx * (1 - fy)
        + img[:, y1, x0] * (1 - fx) * fy
        + img[:, y1, x1] * fx * fy
    )
    out = np.where(inside, out, 0.0).astype(sample.image.dtype)
    return SegmentationSample(out, mask)


def hflip(sample: SegmentationSample) -> SegmentationSample:
    return SegmentationSample(sample.image[:, :, ::-1].copy(), sample.mask[:, ::-1].copy())


def augment(sample: SegmentationSample, seed, policy: AugmentPolicy | None = None) -> SegmentationSample:
    """Random scale, rotation and horizontal flip, deterministic in ``seed``.

    ``seed`` may be an int or a sequence of ints such as (global seed, index, epoch).
    """
    policy = (policy or AugmentPolicy()).clamped()
    if not policy.enabled:
        return sample
    rng = np.random.default_rng(seed)
    scale = rng.uniform(*policy.scale_range)
    angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg)
    flip = rng.random() < policy.flip_prob
    out = sample
    if scale != 1.0 or angle != 0.0:
        out = warp(out, scale, angle)
    if flip:
        out = hflip(out)
    return out


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64), n_in - 1)


def resize_to_training(sample: SegmentationSample, side: int) -> SegmentationSample:
    if side <= 0:
        raise ConfigError(f"training side must be positive, got {side}")
    _, h, w = sample.image.shape
    if (h, w) == (side, side):
        return sample
    ry = interpolation_matrix(h, side)
    rx = interpolation_matrix(w, side)
    image = (ry @ sample.image.astype(np.float64) @ rx.T).astype(sample.image.dtype)
    mask = sample.mask[np.ix_(nearest_indices(h, side), nearest_indices(w, side))]
    return SegmentationSample(image, mask)
