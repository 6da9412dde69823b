"""
Synthetic aerial disaster scenes with pixel-exact raw annotations.

Every scene starts from a ground layer (sand or tree) and then paints, in
order: a water blob, a road ribbon, debris blobs, tree/sand patches,
buildings (rectangles), vehicles (small boxes) and occasionally an
unlabeled void patch. Later layers overwrite earlier ones in both the image
and the mask.

Class appearance (RGB in [0, 1], before per-pixel noise):

=========================  ==========================================
debris                     brown/grey two-tone speckle
water                      deep blue, faint horizontal ripples
building (standing)        brick-red roof with a darker 4px grid
building (total destr.)    pale ochre roof with coarse dark speckle
vehicle                    near-white box with a dark windscreen bar
road                       flat grey with a pale centre line
tree                       green with blotchy low-frequency shading
sand                       smooth pale yellow
unlabeled                  black
=========================  ==========================================

The three standing-building raw levels share one texture, since they merge
into a single evaluated class.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import netpbm
from .data import DatasetManifest, write_manifest
from .errors import UsageError
from .taxonomy import RAW_LABELS

RAW = {name: i for i, name in enumerate(RAW_LABELS)}

BASE_COLOR = {
    "debris": (0.50, 0.42, 0.34),
    "water": (0.10, 0.25, 0.60),
    "standing": (0.72, 0.24, 0.20),
    "destroyed": (0.78, 0.66, 0.40),
    "vehicle": (0.92, 0.92, 0.95),
    "road": (0.42, 0.42, 0.44),
    "tree": (0.14, 0.46, 0.16),
    "sand": (0.88, 0.82, 0.58),
}


def _paint(image, mask, region, color, label):
    image[:, region] = np.asarray(color, dtype=np.float64)[:, None]
    mask[region] = label


def _blob(rng, side, yy, xx, r_lo, r_hi):
    cy, cx = rng.uniform(0, side, size=2)
    ry, rx = rng.uniform(r_lo, r_hi, size=2)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    ang = np.arctan2(v, u)
    wobble = 1.0 + 0.15 * np.sin(3 * ang + rng.uniform(0, 2 * np.pi))
    return (u / rx) ** 2 + (v / ry) ** 2 <= wobble**2


def render_scene(rng: np.random.Generator, side: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (H x W x 3 uint8 image, H x W uint8 raw mask)."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    image = np.zeros((3, side, side))
    mask = np.zeros((side, side), dtype=np.uint8)
    u = side / 64.0

    ground = "sand" if rng.random() < 0.5 else "tree"
    _paint(image, mask, np.ones((side, side), bool), BASE_COLOR[ground], RAW[ground])

    if rng.random() < 0.75:
        _paint(image, mask, _blob(rng, side, yy, xx, 8 * u, 16 * u), BASE_COLOR["water"], RAW["water"])

    # road: straight ribbon through a random point
    road = np.zeros((side, side), bool)
    if rng.random() < 0.85:
        theta = rng.uniform(0, np.pi)
        py, px = rng.uniform(0.25 * side, 0.75 * side, size=2)
        dist = -np.sin(theta) * (xx - px) + np.cos(theta) * (yy - py)
        half = rng.uniform(4, 6) * u
        road = np.abs(dist) <= half
        _paint(image, mask, road, BASE_COLOR["road"], RAW["road"])
        line = road & (np.abs(dist) <= 0.6 * u)
        image[:, line] = 0.75

    for _ in range(rng.integers(0, 3)):
        _paint(image, mask, _blob(rng, side, yy, xx, 4 * u, 9 * u), BASE_COLOR["debris"], RAW["debris"])

    other = "tree" if ground == "sand" else "sand"
    for _ in range(rng.integers(0, 3)):
        _paint(image, mask, _blob(rng, side, yy, xx, 5 * u, 10 * u), BASE_COLOR[other], RAW[other])

    for _ in range(rng.integers(1, 4)):
        h, w = rng.uniform(10, 20, size=2) * u
        y0, x0 = rng.uniform(-0.1 * side, side - 0.5 * h), rng.uniform(-0.1 * side, side - 0.5 * w)
        rect = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        level = rng.choice(["building-no-damage", "building-medium-damage", "building-major-damage", "building-total-destruction"])
        if level == "building-total-destruction":
            _paint(image, mask, rect, BASE_COLOR["destroyed"], RAW[level])
            speck = rect & (rng.random((side, side)) < 0.35)
            image[:, speck] = np.array([0.30, 0.26, 0.22])[:, None]
        else:
            _paint(image, mask, rect, BASE_COLOR["standing"], RAW[level])
            grid = rect & ((((yy - y0) % (4 * u)) < 1) | (((xx - x0) % (4 * u)) < 1))
            image[:, grid] = np.array([0.50, 0.15, 0.12])[:, None]

    for _ in range(rng.integers(0, 3)):
        if road.any() and rng.random() < 0.7:
            ys, xs = np.nonzero(road)
            k = rng.integers(len(ys))
            cy, cx = ys[k], xs[k]
        else:
            cy, cx = rng.uniform(0, side, size=2)
        h, w = (rng.uniform(6, 9) * u, rng.uniform(9, 13) * u)
        if rng.random() < 0.5:
            h, w = w, h
        box = (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)
        _paint(image, mask, box, BASE_COLOR["vehicle"], RAW["vehicle"])
        bar = box & (np.abs(yy - cy) <= h / 6) & (np.abs(xx - cx) <= w / 6)
        image[:, bar] = 0.2

    if rng.random() < 0.3:
        cy, cx = rng.uniform(0, side, size=2)
        r = rng.uniform(2, 4) * u
        void = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
        _paint(image, mask, void, (0.0, 0.0, 0.0), RAW["unlabeled"])

    # textures
    low = _lowfreq(rng, side)
    for label in (RAW["tree"], RAW["debris"]):
        sel = mask == label
        image[:, sel] *= (0.85 + 0.3 * low[sel])[None]
    debris = mask == RAW["debris"]
    alt = debris & (rng.random((side, side)) < 0.4)
    image[:, alt] = np.array([0.36, 0.36, 0.38])[:, None]
    water = mask == RAW["water"]
    image[:, water] *= (1.0 + 0.12 * np.sin(yy[water] * 1.3 / u))[None]
    void = mask == RAW["unlabeled"]

    image *= rng.uniform(0.9, 1.1)
    image += rng.normal(0.0, 0.03, size=image.shape)
    image[:, void] = 0.0
    rgb = np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    return rgb, mask


def _lowfreq(rng, side):
    coarse = rng.random((5, 5))
    idx = np.linspace(0, 4, side)
    i0 = np.floor(idx).astype(int).clip(0, 3)
    f = idx - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    return rows[:, i0] * (1 - f)[None] + rows[:, i0 + 1] * f[None]


def synth_generate(out_dir: str | os.PathLike, n: int, side: int = 64, seed: int = 0, split: str = "train") -> tuple[Path, DatasetManifest]:
    """Write ``n`` scenes plus ``manifest.json`` under ``out_dir``."""
    if n < 1:
        raise UsageError(f"synthetic dataset needs at least one image, got {n}")
    if side < 8:
        raise UsageError(f"synthetic scenes need side >= 8, got {side}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        rgb, raw = render_scene(rng, side)
        img_path = out / "images" / f"{i:05d}.ppm"
        msk_path = out / "masks" / f"{i:05d}.pgm"
        netpbm.write(img_path, rgb)
        netpbm.write(msk_path, raw)
        entries.append((str(img_path.resolve()), str(msk_path.resolve())))
    manifest = DatasetManifest(split=split, entries=entries)
    path = out / "manifest.json"
    write_manifest(path, manifest)
    return path, manifest
