import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rednet import tensor as T
from rednet.attention import PositionAttentionModule, attention_map, pam_forward
from rednet.errors import DimensionError
from rednet.oracles import attention_map_bruteforce, pam_bruteforce
from rednet.tensor import Tensor
from rednet.verify import alpha_zero_is_identity, pam_oracle_error, permutation_error

F64 = np.float64


def make_pam(c, seed=0, alpha=0.0):
    pam = PositionAttentionModule(np.random.default_rng(seed), c, dtype=F64)
    pam.alpha.data = np.array([alpha])
    return pam


def eye_kernel(c):
    return np.eye(c).reshape(c, c, 1, 1)


def test_fields():
    pam = make_pam(5)
    assert pam.w_b.shape == pam.w_c.shape == pam.w_d.shape == (5, 5, 1, 1)
    assert PositionAttentionModule(np.random.default_rng(0), 3).alpha.data.tolist() == [0.0]


def test_projection_identity_and_zero(rng):
    a = Tensor(rng.standard_normal((1, 3, 4, 2)))
    pam = make_pam(3)
    for w in (pam.w_b, pam.w_c, pam.w_d):
        w.data = eye_kernel(3)
    for out in pam.project(a):
        np.testing.assert_array_equal(out.data, a.data)
    for w in (pam.w_b, pam.w_c, pam.w_d):
        w.data = np.zeros((3, 3, 1, 1))
    for out in pam.project(a):
        assert not out.data.any()


def test_projection_is_per_pixel_mix(rng):
    a = rng.standard_normal((1, 4, 3, 3))
    pam = make_pam(4, seed=3)
    b, _, _ = pam.project(Tensor(a))
    wb = pam.w_b.data.reshape(4, 4)
    for y in range(3):
        for x in range(3):
            np.testing.assert_allclose(b.data[0, :, y, x], wb @ a[0, :, y, x], rtol=1e-12)


def test_projection_channel_mismatch():
    with pytest.raises(DimensionError):
        make_pam(3).project(Tensor(np.zeros((1, 4, 2, 2))))


def test_map_uniform_for_equal_columns():
    col = np.array([0.3, -1.2])
    b = np.repeat(col[:, None], 6, axis=1).reshape(2, 2, 3)
    s = attention_map(Tensor(b), Tensor(b)).data
    np.testing.assert_allclose(s, np.full((6, 6), 1 / 6), rtol=1e-14)


def test_map_two_positions():
    b = Tensor(np.array([1.0, 0.0]).reshape(1, 1, 2))
    s = attention_map(b, b).data
    np.testing.assert_allclose(s, [[0.7311, 0.2689], [0.5, 0.5]], atol=5e-5)
    e = np.e
    np.testing.assert_allclose(s[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-15)


def test_map_single_position(rng):
    b = Tensor(rng.standard_normal((3, 1, 1)))
    assert attention_map(b, b).data.tolist() == [[1.0]]


def test_map_matches_oracle_orientation(rng):
    # asymmetric b, c so a transposed energy would disagree
    b, c = rng.standard_normal((3, 2, 3)), rng.standard_normal((3, 2, 3))
    got = attention_map(Tensor(b), Tensor(c)).data
    want = attention_map_bruteforce(b.reshape(3, 6), c.reshape(3, 6))
    np.testing.assert_allclose(got, want, rtol=1e-12)
    assert not np.allclose(got, attention_map_bruteforce(c.reshape(3, 6), b.reshape(3, 6)))


def test_map_shape_mismatch():
    with pytest.raises(DimensionError):
        attention_map(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros((2, 2, 3))))


@given(st.integers(1, 8), st.integers(1, 64), st.integers(0, 2**31), st.floats(0.01, 4.0))
def test_map_row_stochastic(c, n, seed, spread):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((c, n, 1)) * spread
    cc = rng.standard_normal((c, n, 1)) * spread
    s = attention_map(Tensor(b), Tensor(cc)).data
    assert s.min() >= 0 and s.max() <= 1
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_alpha_zero_exact_identity(rng):
    a = rng.standard_normal((2, 4, 3, 5))
    out = pam_forward(make_pam(4, seed=7), Tensor(a)).data
    assert np.array_equal(out, a)


def test_alpha_zero_identity_float32(rng):
    a = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
    pam = PositionAttentionModule(np.random.default_rng(1), 3)
    out = pam(Tensor(a)).data
    assert out.dtype == np.float32 and np.array_equal(out, a)


def test_single_pixel_scales_input(rng):
    a = rng.standard_normal((1, 3, 1, 1))
    pam = make_pam(3, seed=2, alpha=0.75)
    pam.w_d.data = eye_kernel(3)
    np.testing.assert_allclose(pam(Tensor(a)).data, 1.75 * a, rtol=1e-15)


def test_random_instance_against_bruteforce(rng):
    a = rng.standard_normal((1, 4, 3, 3))
    pam = make_pam(4, seed=11, alpha=0.5)
    got = pam(Tensor(a)).data[0]
    want = pam_bruteforce(a[0], pam.w_b.data, pam.w_c.data, pam.w_d.data, 0.5)
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_batch_equals_per_sample(rng):
    a = rng.standard_normal((3, 2, 3, 2))
    pam = make_pam(2, seed=5, alpha=-0.4)
    whole = pam(Tensor(a)).data
    for n in range(3):
        np.testing.assert_array_equal(whole[n], pam(Tensor(a[n:n + 1])).data[0])


@pytest.mark.parametrize("seed", range(100))
def test_invariants_per_seed(seed):
    assert pam_oracle_error(seed) < 1e-6
    assert alpha_zero_is_identity(seed)
    assert permutation_error(seed) < 1e-10


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31))
def test_output_shape_equals_input(c, h, w, n, seed):
    a = np.random.default_rng(seed).standard_normal((n, c, h, w))
    assert make_pam(c, seed, alpha=0.3)(Tensor(a)).shape == a.shape


def test_module_gradient(rng):
    a = Tensor(rng.standard_normal((1, 3, 3, 2)), requires_grad=True)
    pam = make_pam(3, seed=4, alpha=0.6)
    probe = Tensor(rng.standard_normal((1, 3, 3, 2)))
    err = T.check_gradients(lambda: T.sum_all(T.mul(pam(a), probe)), [a] + pam.parameters())
    assert err < 1e-4
