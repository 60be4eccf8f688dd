import numpy as np
import pytest

from linrec.numerics import (
    ComplexPair,
    Rng,
    ShapeError,
    alloc,
    allocation_count,
    as_tensor,
    complex_dtype,
    complex_exp,
    real_dtype,
    sigmoid,
    softplus,
)


def test_dtype_resolvers():
    assert real_dtype("f32") == np.dtype(np.float32)
    assert real_dtype("f64") == np.dtype(np.float64)
    assert real_dtype(np.float64) == np.dtype(np.float64)
    assert complex_dtype("f32") == np.dtype(np.complex64)
    assert complex_dtype("f64") == np.dtype(np.complex128)
    with pytest.raises(ValueError):
        real_dtype("f16")


def test_softplus_reference_values():
    assert softplus(np.array(0.0)) == pytest.approx(np.log(2.0), rel=1e-15)
    # large positive input passes through unchanged (no overflow)
    assert softplus(np.array(100.0)) == 100.0
    assert softplus(np.array(1e4)) == 1e4
    # large negative input: softplus(x) ~ exp(x)
    x = np.array(-100.0)
    assert softplus(x) == pytest.approx(np.exp(-100.0), rel=1e-12)
    assert np.isfinite(softplus(np.array([-1e4, 0.0, 1e4]))).all()


def test_softplus_f32_threshold():
    x = np.array([40.0, -40.0], np.float32)
    out = softplus(x)
    assert out.dtype == np.float32
    assert out[0] == np.float32(40.0)
    assert out[1] >= 0.0


def test_sigmoid_stable_and_symmetric():
    assert sigmoid(np.array(0.0)) == 0.5
    big = np.array([800.0, -800.0])
    out = sigmoid(big)
    assert out[0] == 1.0 and out[1] == 0.0  # saturates without overflow
    x = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_complex_exp_planes():
    re = np.array([0.0, -1.0])
    im = np.array([np.pi / 2, np.pi])
    out_re, out_im = complex_exp(re, im)
    expect = np.exp(re + 1j * im)
    np.testing.assert_allclose(out_re, expect.real, atol=1e-15)
    np.testing.assert_allclose(out_im, expect.imag, atol=1e-15)


def test_complex_pair_round_trip():
    z = np.array([[1.0 + 2.0j, -3.0j]])
    pair = ComplexPair.from_complex(z)
    np.testing.assert_array_equal(pair.to_complex(), z)
    with pytest.raises(ShapeError):
        ComplexPair(np.zeros(3), np.zeros(4))


def test_as_tensor_contiguity_and_dtype():
    x = np.arange(12.0).reshape(3, 4)[:, ::2]  # non-contiguous view
    t = as_tensor(x)
    assert t.flags["C_CONTIGUOUS"]
    # integer input is promoted to the default float dtype
    assert as_tensor(np.arange(4, dtype=np.int16)).dtype == np.float64
    with pytest.raises(ValueError):
        as_tensor(np.arange(4.0), dtype=np.int32)


def test_rng_deterministic_and_split():
    a = Rng(123).normal((4, 5))
    b = Rng(123).normal((4, 5))
    np.testing.assert_array_equal(a, b)
    kids1 = Rng(7).split(3)
    kids2 = Rng(7).split(3)
    for k1, k2 in zip(kids1, kids2):
        np.testing.assert_array_equal(k1.normal(8), k2.normal(8))
    # siblings are decorrelated streams
    assert not np.array_equal(kids1[0].normal(8), kids1[1].normal(8))


def test_rng_uniform_bounds_and_integers():
    u = Rng(5).uniform(2.0, 3.0, 1000)
    assert u.min() >= 2.0 and u.max() < 3.0
    ints = Rng(5).integers(0, 10, 1000)
    assert ints.min() >= 0 and ints.max() < 10


def test_alloc_counter():
    before = allocation_count()
    buf = alloc((3, 4), np.float64)
    assert buf.shape == (3, 4) and buf.dtype == np.float64
    assert allocation_count() == before + 1
