import numpy as np
import pytest

from attenfair import atten
from attenfair.atten import AttenConfig
from attenfair.numerics import Tensor, grad_check, ops
from attenfair.numerics.tensor import ShapeError


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def cfg(c=8, mask=True):
    return AttenConfig(channels=c, reduction_ratio=4, spatial_kernel=3, use_guided_mask=mask)


def test_maps_have_expected_dims_and_range(rng):
    c = cfg()
    p = atten.init_params(c, rng)
    F = Tensor(rng.normal(size=(8, 4, 4)))
    m_c = atten.channel_attention(F, p)
    m_s = atten.spatial_attention(ops.mul(m_c, F), p)
    assert m_c.dims == [8, 1, 1] and m_s.dims == [1, 4, 4]
    for m in (m_c, m_s):
        assert np.all((m.data > 0) & (m.data < 1))


def test_zero_params_give_half_maps(rng):
    p = atten.init_params(cfg(), zero=True)
    F = Tensor(rng.normal(size=(8, 4, 4)))
    np.testing.assert_array_equal(atten.channel_attention(F, p).data, 0.5)
    np.testing.assert_array_equal(atten.spatial_attention(F, p).data, 0.5)


def test_saturated_spatial_map_empties_inverse(rng):
    p = atten.init_params(cfg(), rng)
    p["sp_kernel"] = np.zeros_like(p["sp_kernel"])
    p["sp_bias"] = np.array([40.0])  # sigmoid(40) == 1.0 in float64
    F = Tensor(rng.normal(size=(8, 4, 4)))
    b = atten.atten_forward(F, None, cfg(), p)
    np.testing.assert_array_equal(b.inverse.data, 0.0)
    np.testing.assert_array_equal(b.refined.data, (b.channel_map.data * F.data))


def test_zero_mask_leaves_guided_equal_to_refined(rng):
    p = atten.init_params(cfg(), rng)
    F = Tensor(rng.normal(size=(2, 8, 4, 4)))
    b = atten.atten_forward(F, np.zeros((2, 1, 8, 8)), cfg(), p)
    assert b.guided.data.tobytes() == b.refined.data.tobytes()
    no_mask = atten.atten_forward(F, None, cfg(mask=False), p)
    assert no_mask.guided.data.tobytes() == b.guided.data.tobytes()


def test_forced_mask_pooling_example(rng):
    mask = np.zeros((1, 4, 4))
    mask[0, 0, 0] = mask[0, 2, 3] = 1
    pooled = atten.pool_mask(mask, 2, 2)
    np.testing.assert_array_equal(pooled, [[[1, 0], [0, 1]]])
    p = atten.init_params(cfg(), rng)
    F = Tensor(rng.normal(size=(8, 2, 2)))
    b = atten.atten_forward(F, mask, cfg(), p)
    np.testing.assert_allclose(b.guided.data - b.refined.data, pooled * F.data, atol=1e-15)
    off = pooled[0] == 0
    np.testing.assert_array_equal(b.guided.data[:, off], b.refined.data[:, off])


def test_map_level_complementarity(rng):
    p = atten.init_params(cfg(), rng)
    F = Tensor(rng.normal(size=(8, 4, 4)) + 0.1)
    b = atten.atten_forward(F, None, cfg(), p)
    # refined / (M_c F) and inverse / F recover M_s and 1 - M_s
    ratio_r = b.refined.data / (b.channel_map.data * F.data)
    ratio_i = b.inverse.data / F.data
    np.testing.assert_allclose(ratio_r + ratio_i, 1.0, atol=1e-9)


def test_pool_mask_rejects_bad_ratios():
    with pytest.raises(atten.MaskError):
        atten.pool_mask(np.zeros((1, 6, 6)), 4, 4)
    with pytest.raises(atten.MaskError):
        atten.pool_mask(np.zeros((1, 8, 4)), 4, 4)


def test_channel_mismatch_raises(rng):
    p = atten.init_params(cfg(), rng)
    with pytest.raises(ShapeError):
        atten.atten_forward(Tensor(np.ones((4, 4, 4))), None, cfg(), p)


def test_block_is_deterministic(rng):
    p = atten.init_params(cfg(), rng)
    F = rng.normal(size=(2, 8, 4, 4))
    m = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
    a = atten.atten_forward(Tensor(F), m, cfg(), p)
    b = atten.atten_forward(Tensor(F), m, cfg(), p)
    for name in ("refined", "inverse", "guided"):
        assert getattr(a, name).data.tobytes() == getattr(b, name).data.tobytes()


def test_map_gradients(rng):
    p = atten.init_params(cfg(), rng)
    for _ in range(5):
        F = rng.normal(size=(8, 4, 4))
        assert grad_check(lambda v: ops.reduce(atten.channel_attention(v, p)), F) < 1e-5
        assert grad_check(lambda v: ops.reduce(atten.spatial_attention(v, p)), F) < 1e-5
        assert grad_check(lambda w: ops.reduce(atten.channel_attention(F, {**p, "mlp_w1": w})), p["mlp_w1"]) < 1e-5


def test_full_block_gradient(rng):
    p = atten.init_params(cfg(), rng)
    m = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)

    def loss(v):
        b = atten.atten_forward(v, m, cfg(), p)
        return ops.add(ops.add(ops.reduce(b.refined), ops.reduce(b.inverse)), ops.reduce(b.guided))

    assert grad_check(loss, rng.normal(size=(2, 8, 4, 4))) < 1e-5


def test_pgm_roundtrip():
    mask = np.zeros((1, 3, 5))
    mask[0, 1, 2:4] = 1
    back = atten.read_pgm_mask(atten.write_pgm_mask(mask))
    np.testing.assert_array_equal(back, mask)
    data = b"P5\n# comment\n2 1\n255\n" + bytes([200, 10])
    np.testing.assert_array_equal(atten.read_pgm_mask(data), [[[1, 0]]])
    with pytest.raises(atten.MaskError):
        atten.read_pgm_mask(b"P2\n1 1\n255\n0")
    with pytest.raises(atten.MaskError):
        atten.read_pgm_mask(b"P5\n4 4\n255\n\x00")
