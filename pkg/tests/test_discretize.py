import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linrec.discretize import (
    NonMonotoneTimestamps,
    SingularBilinear,
    deltas_from_timestamps,
    discretize,
    discretize_bilinear,
    discretize_dirac,
    discretize_zoh,
    scheme_factors,
)


A = np.array([-1.0 + 0.0j])
B = np.array([1.0 + 0.0j])
DT = np.array([0.1])


def test_zoh_reference_values():
    abar, bbar = discretize_zoh(A, B, DT)
    assert abar[0] == pytest.approx(0.9048374180359595, abs=1e-15)
    assert bbar[0] == pytest.approx(0.09516258196404048, abs=1e-15)


def test_bilinear_reference_values():
    abar, bbar = discretize_bilinear(A, B, DT)
    assert abar[0] == pytest.approx(0.95 / 1.05, abs=1e-15)
    assert bbar[0] == pytest.approx(0.1 / 1.05, abs=1e-15)


def test_dirac_keeps_input_weight():
    abar, bbar = discretize_dirac(A, B, DT)
    assert abar[0] == pytest.approx(np.exp(-0.1), abs=1e-15)
    assert bbar[0] == B[0]  # impulse train: no delta scaling on b


def test_dispatch_table():
    for scheme, fn in [("zoh", discretize_zoh), ("bilinear", discretize_bilinear),
                       ("dirac", discretize_dirac)]:
        got = discretize(scheme, A, B, DT)
        want = fn(A, B, DT)
        np.testing.assert_array_equal(got[0], want[0])
        np.testing.assert_array_equal(got[1], want[1])
    with pytest.raises(ValueError):
        discretize("euler", A, B, DT)


def test_zoh_small_pole_limit():
    a = np.array([0.0 + 0.0j, 1e-12 + 0.0j])
    b = np.ones(2, complex)
    abar, bbar = discretize_zoh(a, b, np.array([0.25]))
    np.testing.assert_allclose(abar, [1.0, 1.0], atol=1e-10)
    # (e^{delta a} - 1)/a -> delta as a -> 0
    np.testing.assert_allclose(bbar, [0.25, 0.25], atol=1e-10)


def test_zoh_semigroup():
    rng = np.random.default_rng(0)
    a = (-rng.uniform(0.1, 2, 16) + 1j * rng.normal(size=16)).astype(complex)
    d1, d2 = 0.3, 0.45
    a1, _ = scheme_factors("zoh", a, np.array(d1))
    a2, _ = scheme_factors("zoh", a, np.array(d2))
    a12, _ = scheme_factors("zoh", a, np.array(d1 + d2))
    np.testing.assert_allclose(a1 * a2, a12, rtol=1e-12)


def test_zoh_bilinear_second_order_agreement():
    """|zoh - bilinear| shrinks ~100x when delta shrinks 10x."""
    rng = np.random.default_rng(1)
    a = (-rng.uniform(0.5, 2, 32) + 1j * rng.normal(size=32))
    gap = []
    for d in (0.1, 0.01):
        az, _ = scheme_factors("zoh", a, np.array(d))
        ab, _ = scheme_factors("bilinear", a, np.array(d))
        gap.append(np.max(np.abs(az - ab)))
    assert gap[0] / gap[1] >= 90.0


@settings(max_examples=200, deadline=None)
@given(re=st.floats(-50.0, 0.0), im=st.floats(-50.0, 50.0),
       d=st.floats(1e-3, 10.0))
def test_stability_half_plane_to_unit_disk(re, im, d):
    """Re(a) <= 0 implies |abar| <= 1 for every scheme."""
    a = np.array([complex(re, im)])
    delta = np.array([d])
    for scheme in ("zoh", "dirac"):
        abar, _ = scheme_factors(scheme, a, delta)
        assert np.abs(abar[0]) <= 1.0 + 1e-12
    abar, _ = scheme_factors("bilinear", a, delta)
    assert np.abs(abar[0]) <= 1.0 + 1e-12


def test_bilinear_singularity_is_loud():
    with pytest.raises(SingularBilinear):
        discretize_bilinear(np.array([2.0 + 0.0j]), B, np.array([1.0]))


def test_matrix_b_gets_scale_per_row():
    a = np.array([-1.0 + 0.5j, -0.5 - 0.25j])
    bmat = np.arange(6, dtype=complex).reshape(2, 3)
    abar, bbar = discretize_zoh(a, bmat, np.array([0.2]))
    _, scale = scheme_factors("zoh", a, np.array([0.2]))
    np.testing.assert_allclose(bbar, scale[:, None] * bmat, rtol=1e-14)


def test_deltas_from_timestamps():
    ts = np.array([0.0, 1.0, 3.0, 6.0])
    np.testing.assert_array_equal(deltas_from_timestamps(ts, 0.5),
                                  [0.5, 1.0, 2.0, 3.0])
    batched = np.array([[0.0, 2.0], [1.0, 1.5]])
    np.testing.assert_array_equal(deltas_from_timestamps(batched, 0.25),
                                  [[0.25, 2.0], [0.25, 0.5]])


def test_deltas_from_timestamps_rejects_bad_input():
    with pytest.raises(NonMonotoneTimestamps):
        deltas_from_timestamps(np.array([0.0, 2.0, 1.0]), 0.1)
    with pytest.raises(ValueError):
        deltas_from_timestamps(np.array([0.0, 1.0]), -0.5)
    with pytest.raises(ValueError):
        deltas_from_timestamps(np.array([]), 0.1)


def test_timestamp_deltas_drive_equal_results_on_uniform_grid():
    """Uniform timestamps reproduce the constant-delta path exactly."""
    ts = np.arange(8.0) * 0.5
    deltas = deltas_from_timestamps(ts, 0.5)
    np.testing.assert_array_equal(deltas, np.full(8, 0.5))
