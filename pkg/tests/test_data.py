import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rednet import netpbm
from rednet.data import (AugmentPolicy, DatasetManifest, SegmentationSample, augment, hflip, image_to_bytes,
                         load_manifest, load_sample, resize_to_training, shuffle_epoch, warp, write_manifest)
from rednet.errors import ConfigError, DataError, UsageError
from rednet.synth import synth_generate
from rednet.taxonomy import TAXONOMY, canonical_raw, colorize, merge_labels

MERGED = TAXONOMY.merged_index
RAW = TAXONOMY.raw_index


# -- taxonomy ---------------------------------------------------------------


def test_taxonomy_shape():
    assert len(TAXONOMY.raw_labels) == 11 and len(TAXONOMY.merged_labels) == 9
    assert len(TAXONOMY.evaluated_labels) == 8 and "unlabeled" not in TAXONOMY.evaluated_labels
    m = TAXONOMY.merge_map
    assert m.shape == (11,) and set(m.tolist()) == set(range(9))


def test_merge_examples():
    got = merge_labels(np.array([[RAW("building-major-damage"), RAW("building-total-destruction"), RAW("water")]]))
    assert got.tolist() == [[MERGED("building-not-totally-destroyed"), MERGED("building-totally-destroyed"),
                             MERGED("water")]]


def test_merge_out_of_range():
    with pytest.raises(DataError, match="raw label 11"):
        merge_labels(np.array([[0, 11]]))


def test_merge_idempotent_on_canonical_raw(rng):
    merged = rng.integers(0, 9, size=(7, 5))
    raw = canonical_raw(merged)
    np.testing.assert_array_equal(merge_labels(raw), merged)
    np.testing.assert_array_equal(merge_labels(canonical_raw(merge_labels(raw))), merged)


def test_palette_colours_distinct():
    assert len(set(TAXONOMY.palette)) == 9
    assert colorize(np.array([[0, 2]])).tolist() == [[list(TAXONOMY.palette[0]), list(TAXONOMY.palette[2])]]


# -- netpbm ------------------------------------------------------------------


@settings(max_examples=30)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_ppm_round_trip(arr):
    np.testing.assert_array_equal(netpbm.decode(netpbm.encode(arr)), arr)


@settings(max_examples=30)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_pgm_round_trip(arr):
    np.testing.assert_array_equal(netpbm.decode(netpbm.encode(arr)), arr)


def test_header_comments_accepted():
    buf = b"P5\n# made by hand\n2 1\n# max\n255\n\x03\x04"
    assert netpbm.decode(buf).tolist() == [[3, 4]]


@pytest.mark.parametrize("buf,msg", [
    (b"P3\n1 1\n255\n0 0 0", "magic"),
    (b"P5\n2 2\n255\n\x00\x00\x00", "expected 4"),
    (b"P5\n2 2\n65535\n" + b"\x00" * 8, "maxval"),
    (b"P5\n2 x\n255\n\x00", "non-numeric"),
    (b"P5\n2 2", "truncated"),
])
def test_malformed_netpbm(buf, msg):
    with pytest.raises(DataError, match=msg):
        netpbm.decode(buf, path="bad.pgm")


def test_read_reports_path(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(DataError, match=str(p)):
        netpbm.read(p)


# -- loading -----------------------------------------------------------------


def write_pair(tmp_path, rgb, raw, name="a"):
    img, msk = tmp_path / f"{name}.ppm", tmp_path / f"{name}.pgm"
    netpbm.write(img, rgb)
    netpbm.write(msk, raw)
    return img, msk


def test_load_sample_scaling_and_merge(tmp_path):
    img, msk = write_pair(tmp_path, np.full((2, 2, 3), 255, np.uint8), np.full((2, 2), 4, np.uint8))
    s = load_sample(img, msk)
    assert s.image.shape == (3, 2, 2) and (s.image == 1.0).all()
    assert (s.mask == MERGED("building-not-totally-destroyed")).all()


def test_load_sample_extent_mismatch(tmp_path):
    img, msk = write_pair(tmp_path, np.zeros((3, 3, 3), np.uint8), np.zeros((2, 2), np.uint8))
    with pytest.raises(DataError, match="extent"):
        load_sample(img, msk)


def test_load_sample_bad_index(tmp_path):
    img, msk = write_pair(tmp_path, np.zeros((2, 2, 3), np.uint8), np.full((2, 2), 200, np.uint8))
    with pytest.raises(DataError, match=r"a\.pgm"):
        load_sample(img, msk)


def test_sample_extent_invariant():
    with pytest.raises(DataError):
        SegmentationSample(np.zeros((3, 2, 2), np.float32), np.zeros((2, 3), np.uint8))


def test_manifest_round_trip(tmp_path, rng):
    pairs = [write_pair(tmp_path, rng.integers(0, 256, (4, 4, 3), dtype=np.uint8),
                        rng.integers(0, 11, (4, 4), dtype=np.uint8), name=str(i)) for i in range(3)]
    path = tmp_path / "manifest.json"
    write_manifest(path, DatasetManifest("val", [(str(a), str(b)) for a, b in pairs]))
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and doc["split"] == "val" and len(doc["classes"]) == 9
    m = load_manifest(path)
    assert len(m) == 3
    for (img, msk), (ppm, _) in zip(m.entries, pairs):
        s = load_sample(img, msk)
        np.testing.assert_array_equal(image_to_bytes(s.image), netpbm.read(ppm))


@pytest.mark.parametrize("edit", [
    lambda d: d.update(version=2),
    lambda d: d.update(split="holdout"),
    lambda d: d.update(classes=d["classes"][:-1]),
    lambda d: d["entries"][0].update(image="missing.ppm"),
])
def test_manifest_rejections(tmp_path, edit):
    img, msk = write_pair(tmp_path, np.zeros((2, 2, 3), np.uint8), np.zeros((2, 2), np.uint8))
    path = tmp_path / "manifest.json"
    write_manifest(path, DatasetManifest("train", [(str(img), str(msk))]))
    doc = json.loads(path.read_text())
    edit(doc)
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_manifest(path)


# -- augmentation ------------------------------------------------------------


def random_sample(rng, h=12, w=10, dtype=np.float32):
    return SegmentationSample(rng.random((3, h, w)).astype(dtype), rng.integers(0, 9, (h, w)).astype(np.uint8))


def test_disabled_policy_is_identity(rng):
    s = random_sample(rng)
    out = augment(s, 5, AugmentPolicy(enabled=False))
    assert out.image.tobytes() == s.image.tobytes() and out.mask.tobytes() == s.mask.tobytes()


def test_forced_flip_is_involution(rng):
    s = random_sample(rng)
    pol = AugmentPolicy(scale_range=[1.0, 1.0], rotation_deg=0.0, flip_prob=1.0)
    once = augment(s, 3, pol)
    np.testing.assert_array_equal(once.mask, s.mask[:, ::-1])
    twice = augment(once, 3, pol)
    assert twice.image.tobytes() == s.image.tobytes() and twice.mask.tobytes() == s.mask.tobytes()


def test_zero_rotation_keeps_histogram(rng):
    s = random_sample(rng)
    pol = AugmentPolicy(scale_range=[1.0, 1.0], rotation_deg=0.0, flip_prob=0.5)
    for seed in range(5):
        out = augment(s, seed, pol)
        assert np.array_equal(np.bincount(out.mask.ravel(), minlength=9), np.bincount(s.mask.ravel(), minlength=9))
    np.testing.assert_array_equal(warp(s, 1.0, 0.0).mask, s.mask)


def test_augment_deterministic(rng):
    s = random_sample(rng)
    a, b = augment(s, (0, 4, 2)), augment(s, (0, 4, 2))
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()


def test_degenerate_policy_clamps():
    pol = AugmentPolicy(scale_range=[2.0, -1.0], flip_prob=3.0, rotation_deg=-5.0).clamped()
    assert pol.scale_range == [1e-3, 2.0] and pol.flip_prob == 1.0 and pol.rotation_deg == 5.0


@pytest.mark.parametrize("scale,angle", [(1.2, 7.0), (0.8, -9.5), (1.0, 10.0), (1.25, 0.0)])
def test_image_and_mask_share_the_transform(rng, scale, angle):
    h, w = 15, 13
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    image = np.stack([xx, yy, np.zeros_like(xx)])
    mask = rng.integers(1, 9, (h, w)).astype(np.uint8)
    out = warp(SegmentationSample(image, mask), scale, angle)
    sx, sy = out.image[0], out.image[1]
    # only pixels well inside the source, away from rounding ties
    ok = (out.mask != 0) & (sx > 0.1) & (sx < w - 1.1) & (sy > 0.1) & (sy < h - 1.1)
    ok &= (np.abs(sx % 1 - 0.5) > 1e-6) & (np.abs(sy % 1 - 0.5) > 1e-6)
    assert ok.sum() > h * w // 3
    want = mask[np.floor(sy + 0.5).astype(int), np.floor(sx + 0.5).astype(int)]
    np.testing.assert_array_equal(out.mask[ok], want[ok])


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.integers(4, 16), st.integers(4, 16))
def test_ignore_pixels_stay_ignored(seed, h, w):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, h, w)
    out = augment(s, seed)
    assert set(np.unique(out.mask)) <= set(np.unique(s.mask)) | {0}
    # an all-unlabeled mask stays all-unlabeled under any transform
    blank = SegmentationSample(s.image, np.zeros_like(s.mask))
    assert not augment(blank, seed).mask.any()


def test_hflip_applies_to_both(rng):
    s = random_sample(rng)
    f = hflip(s)
    np.testing.assert_array_equal(f.image, s.image[:, :, ::-1])
    np.testing.assert_array_equal(f.mask, s.mask[:, ::-1])


# -- resize ------------------------------------------------------------------


def test_resize_noop(rng):
    s = random_sample(rng, 8, 8)
    assert resize_to_training(s, 8) is s


def test_resize_constant_image():
    s = SegmentationSample(np.full((3, 5, 7), 0.25, np.float32), np.full((5, 7), 3, np.uint8))
    out = resize_to_training(s, 11)
    assert out.image.shape == (3, 11, 11)
    np.testing.assert_allclose(out.image, 0.25, rtol=1e-6)
    assert (out.mask == 3).all()


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.integers(1, 20), st.integers(1, 20), st.integers(1, 24))
def test_resize_mask_classes_subset(seed, h, w, side):
    s = random_sample(np.random.default_rng(seed), h, w)
    out = resize_to_training(s, side)
    assert out.mask.shape == (side, side)
    assert set(np.unique(out.mask)) <= set(np.unique(s.mask))


def test_resize_rejects_nonpositive(rng):
    with pytest.raises(ConfigError):
        resize_to_training(random_sample(rng), 0)


# -- synthetic scenes --------------------------------------------------------


def test_synth_four_entries(tmp_path):
    path, manifest = synth_generate(tmp_path / "d", 4, 32, seed=0)
    m = load_manifest(path)
    assert len(m) == 4
    for img, msk in m.entries:
        s = load_sample(img, msk)
        assert s.image.shape == (3, 32, 32)


def test_synth_deterministic(tmp_path):
    synth_generate(tmp_path / "a", 3, 32, seed=7)
    synth_generate(tmp_path / "b", 3, 32, seed=7)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_synth_seed_changes_content(tmp_path):
    synth_generate(tmp_path / "a", 1, 32, seed=1)
    synth_generate(tmp_path / "b", 1, 32, seed=2)
    assert (tmp_path / "a/images/00000.ppm").read_bytes() != (tmp_path / "b/images/00000.ppm").read_bytes()


def test_synth_class_diversity(tmp_path):
    counts = []
    for seed in range(10):
        _, m = synth_generate(tmp_path / str(seed), 1, 64, seed=seed)
        mask = load_sample(*m.entries[0]).mask
        counts.append(len(set(np.unique(mask)) - {0}))
    assert np.mean(counts) >= 4


def test_synth_covers_every_class(tmp_path):
    _, m = synth_generate(tmp_path, 30, 64, seed=0)
    seen = set()
    for img, msk in m.entries:
        seen |= set(np.unique(load_sample(img, msk).mask).tolist())
    assert set(range(1, 9)) <= seen


def test_synth_rejects_empty(tmp_path):
    with pytest.raises(UsageError):
        synth_generate(tmp_path, 0)


# -- shuffling ---------------------------------------------------------------


@given(st.integers(1, 200), st.integers(0, 2**31), st.integers(0, 50))
def test_shuffle_bijection(n, seed, epoch):
    order = shuffle_epoch(n, seed, epoch)
    assert sorted(order.tolist()) == list(range(n))
    assert np.array_equal(order, shuffle_epoch(n, seed, epoch))


def test_shuffle_single_entry():
    assert shuffle_epoch(1, 3, 9).tolist() == [0]


def test_shuffle_epochs_differ():
    n = 6
    same = sum(np.array_equal(shuffle_epoch(n, s, 0), shuffle_epoch(n, s, 1)) for s in range(200))
    # expected collisions 200/720
    assert same <= 3 * math.ceil(200 / math.factorial(n))
