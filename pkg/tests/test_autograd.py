import numpy as np
import pytest

from linrec import autograd
from linrec.autograd import (
    GradBundle,
    RecomputeTape,
    Tape,
    TapeConsumed,
    check_layer_gradients,
    finite_diff_check,
    layer_backward,
    scan_backward,
    scan_forward,
    scheme_partials,
)
from linrec.discretize import scheme_factors
from linrec.layers import LAYER_KINDS, SCHEMES_BY_KIND, make_layer
from linrec.numerics import Rng


def numeric_grad(f, x, h=1e-6):
    """Central differences on a real array-valued parameter of a scalar f."""
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + h
        fp = f()
        x[idx] = keep - h
        fm = f()
        x[idx] = keep
        g[idx] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------- scan pullback

@pytest.mark.parametrize("mode", ["sequential", "parallel"])
@pytest.mark.parametrize("per_step", [False, True])
def test_scan_backward_matches_finite_differences(mode, per_step):
    rng = Rng(5)
    L, n = 9, 4
    a = rng.uniform(0.3, 0.95, (L, n) if per_step else (n,))
    b = rng.normal((L, n))
    x0 = rng.normal((n,))
    w = rng.normal((L, n))  # fixed projection so the loss sees every state

    def loss():
        x, tape = scan_forward(a, b, x0)
        tape.take()
        return float((w * x).sum())

    base = loss()
    assert np.isfinite(base)
    x, tape = scan_forward(a, b, x0, mode=mode, workers=3)
    ga, gb, gx0 = scan_backward(tape, w.copy())
    np.testing.assert_allclose(gb, numeric_grad(loss, b), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(ga, numeric_grad(loss, a), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(gx0, numeric_grad(loss, x0), rtol=1e-6, atol=1e-9)


def test_scan_backward_const_equals_per_step_sum():
    """Broadcasting a constant coefficient must accumulate the same gradient as
    an explicitly repeated per-step coefficient, summed over time."""
    rng = Rng(6)
    L, n = 7, 3
    a = rng.uniform(0.4, 0.9, (n,))
    b = rng.normal((L, n))
    x0 = rng.normal((n,))
    gy = rng.normal((L, n))
    _, t1 = scan_forward(a, b, x0)
    ga_c, gb_c, _ = scan_backward(t1, gy)
    _, t2 = scan_forward(np.tile(a, (L, 1)), b, x0)
    ga_s, gb_s, _ = scan_backward(t2, gy)
    np.testing.assert_allclose(ga_c, ga_s.sum(0), rtol=1e-13)
    np.testing.assert_allclose(gb_c, gb_s, rtol=1e-13)


def test_scan_backward_complex_gradient_convention():
    """Complex gradients carry dL/dRe in their real part and dL/dIm in their
    imaginary part.  For the real loss 0.5*sum|x_k|^2 the state cotangent is
    x itself; the resulting coefficient gradients must match finite
    differences on the real and imaginary parts separately."""
    rng = Rng(7)
    L, n = 6, 2
    ar = rng.uniform(0.3, 0.8, (n,))
    ai = rng.uniform(-0.3, 0.3, (n,))
    br = rng.normal((L, n))
    bi = rng.normal((L, n))

    def loss():
        x, tape = scan_forward(ar + 1j * ai, br + 1j * bi, np.zeros(n, complex))
        tape.take()
        return float(0.5 * (np.abs(x) ** 2).sum())

    x, tape = scan_forward(ar + 1j * ai, br + 1j * bi, np.zeros(n, complex))
    ga, gb, _ = scan_backward(tape, x.copy())
    np.testing.assert_allclose(ga.real, numeric_grad(loss, ar), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(ga.imag, numeric_grad(loss, ai), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(gb.real, numeric_grad(loss, br), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(gb.imag, numeric_grad(loss, bi), rtol=1e-6, atol=1e-9)


def test_scan_backward_shape_guard():
    x, tape = scan_forward(np.full(3, 0.5), np.ones((4, 3)), np.zeros(3))
    with pytest.raises(Exception):
        scan_backward(tape, np.ones((5, 3)))


# ------------------------------------------------------------------------ tapes

def test_tape_is_single_use():
    _, tape = scan_forward(np.full(2, 0.5), np.ones((3, 2)), np.zeros(2))
    assert not tape.consumed
    scan_backward(tape, np.zeros((3, 2)))
    assert tape.consumed
    with pytest.raises(TapeConsumed):
        scan_backward(tape, np.zeros((3, 2)))


def test_layer_tape_is_single_use():
    layer = make_layer("lru", 2, d_state=4, seed=3)
    u = Rng(4).normal((1, 8, 2))
    y, tape = layer.forward(u, tape=True)
    layer_backward(layer, tape, np.ones_like(y))
    with pytest.raises(TapeConsumed):
        layer_backward(layer, tape, np.ones_like(y))


def test_recompute_storage_is_reserved():
    with pytest.raises(NotImplementedError):
        RecomputeTape("scan")


# ------------------------------------------------------- scheme differentiation

@pytest.mark.parametrize("scheme", ["zoh", "bilinear", "dirac"])
def test_scheme_partials_match_finite_differences(scheme):
    lam = np.array([-0.5 + 2.0j, -1.5 - 1.0j, -0.01 + 0.0j])
    delta = np.array([0.08, 0.5, 0.02])
    abar, scale = scheme_factors(scheme, lam, delta)
    da_dl, da_dd, ds_dl, ds_dd = scheme_partials(scheme, lam, delta, abar, scale)
    h = 1e-7
    ap, sp = scheme_factors(scheme, lam + h, delta)
    am, sm = scheme_factors(scheme, lam - h, delta)
    np.testing.assert_allclose(da_dl, (ap - am) / (2 * h), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(ds_dl, (sp - sm) / (2 * h), rtol=1e-6, atol=1e-9)
    ap, sp = scheme_factors(scheme, lam + 1j * h, delta)
    am, sm = scheme_factors(scheme, lam - 1j * h, delta)
    # holomorphic in lambda: d/d(im) = i * d/d(re)
    np.testing.assert_allclose(1j * da_dl, (ap - am) / (2 * h), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(1j * ds_dl, (sp - sm) / (2 * h), rtol=1e-6, atol=1e-9)
    ap, sp = scheme_factors(scheme, lam, delta + h)
    am, sm = scheme_factors(scheme, lam, delta - h)
    np.testing.assert_allclose(da_dd, (ap - am) / (2 * h), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(ds_dd, (sp - sm) / (2 * h), rtol=1e-6, atol=1e-9)


def test_scheme_partials_small_pole_branch():
    lam = np.array([0.0 + 0.0j, 1e-13 + 0.0j])
    delta = np.array([0.3, 0.3])
    abar, scale = scheme_factors("zoh", lam, delta)
    _, _, ds_dl, _ = scheme_partials("zoh", lam, delta, abar, scale)
    # limit of (delta*abar*lam - (abar-1))/lam^2 as lam -> 0 is delta^2/2
    np.testing.assert_allclose(ds_dl, 0.3 ** 2 / 2, rtol=1e-6)


# ---------------------------------------------------------- finite-diff harness

def test_finite_diff_check_accepts_true_gradient():
    rng = Rng(11)
    params = {"w": rng.normal((3, 2))}
    u = rng.normal((4, 2))
    t = rng.normal((4, 3))

    def forward():
        return u @ params["w"].T

    def loss(y):
        return float(0.5 * ((y - t) ** 2).sum())

    analytic = {"w": (forward() - t).T @ u}
    rep = finite_diff_check(forward, params, loss, analytic, rng=Rng(0))
    assert rep.passed
    assert rep.max_rel < 1e-7
    assert "w" in str(rep) and "PASS" in str(rep)


def test_finite_diff_check_flags_scaled_gradient():
    """A gradient off by 2x must be flagged (harness sensitivity check)."""
    rng = Rng(12)
    params = {"w": rng.normal((3, 2))}
    u = rng.normal((4, 2))
    t = rng.normal((4, 3))

    def forward():
        return u @ params["w"].T

    def loss(y):
        return float(0.5 * ((y - t) ** 2).sum())

    analytic = {"w": 2.0 * ((forward() - t).T @ u)}
    rep = finite_diff_check(forward, params, loss, analytic, rng=Rng(0))
    assert not rep.passed
    assert rep.max_rel > 0.4
    assert rep.worst_path == "w"
    assert "FAIL" in str(rep)


def test_finite_diff_check_subsamples_large_tensors():
    rng = Rng(13)
    params = {"w": rng.normal((40, 40))}  # 1600 elements >> max_elements
    calls = [0]

    def forward():
        calls[0] += 1
        return params["w"].sum()

    def loss(y):
        return float(y)

    analytic = {"w": np.ones((40, 40))}
    rep = finite_diff_check(forward, params, loss, analytic,
                            max_elements=16, rng=Rng(0))
    assert rep.passed
    # two evaluations per probed element, far fewer than 2*1600
    assert calls[0] <= 2 * 16 + 2


# ------------------------------------------------------------- layer gradients

QUICK_GRID = [("s4d", "zoh"), ("s4d", "bilinear"), ("s5", "dirac"),
              ("lru", None), ("s6", None), ("rglru", None)]


@pytest.mark.parametrize("kind,scheme", QUICK_GRID)
def test_layer_gradients_match_finite_differences(kind, scheme):
    layer = make_layer(kind, 3, d_state=(None if kind == "rglru" else 4),
                       discretization=scheme, seed=31)
    u = Rng(32).normal((2, 10, 3))
    rep = check_layer_gradients(layer, u, rng=Rng(33))
    assert rep.passed, str(rep)
    assert rep.max_rel < 1e-5
    assert any(row[0] == "u" for row in rep.rows)  # input grad is in the contract


def test_layer_gradients_async():
    layer = make_layer("s4d", 2, d_state=3, asynchronous=True, seed=35)
    u = Rng(36).normal((1, 8, 2))
    deltas = Rng(37).uniform(0.2, 1.5, (1, 8))
    rep = check_layer_gradients(layer, u, deltas=deltas, rng=Rng(38))
    assert rep.passed, str(rep)


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_backward_is_mode_independent(kind):
    """Backward through the parallel-scan tape equals backward through the
    sequential tape to near machine precision."""
    layer = make_layer(kind, 3, d_state=(None if kind == "rglru" else 4), seed=41)
    u = Rng(42).normal((2, 33, 3))
    gy = Rng(43).normal((2, 33, 3))
    _, t_seq = layer.forward(u, tape=True)
    g_seq = layer_backward(layer, t_seq, gy)
    _, t_par = layer.forward(u, "parallel", workers=3, tape=True)
    g_par = layer_backward(layer, t_par, gy)
    for k in g_seq.params:
        np.testing.assert_allclose(g_par.params[k], g_seq.params[k],
                                   rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g_par.u, g_seq.u, rtol=1e-10, atol=1e-12)


def test_gradbundle_contents():
    layer = make_layer("rglru", 2, seed=1)
    u = Rng(2).normal((1, 5, 2))
    y, tape = layer.forward(u, tape=True)
    g = layer_backward(layer, tape, np.ones_like(y))
    assert isinstance(g, GradBundle)
    assert set(g.params) == set(layer.parameters())
    for k, p in layer.parameters().items():
        assert g.params[k].shape == p.shape
        assert np.isrealobj(g.params[k])
    assert g.u.shape == u.shape


def test_gradient_doubling_is_linear():
    layer = make_layer("s5", 2, d_state=4, seed=8)
    u = Rng(9).normal((1, 6, 2))
    gy = Rng(10).normal((1, 6, 2))
    _, t1 = layer.forward(u, tape=True)
    g1 = layer_backward(layer, t1, gy)
    _, t2 = layer.forward(u, tape=True)
    g2 = layer_backward(layer, t2, 2.0 * gy)
    for k in g1.params:
        np.testing.assert_allclose(g2.params[k], 2.0 * g1.params[k],
                                   rtol=1e-12, atol=1e-14)


def test_fault_hook_perturbs_one_path():
    layer = make_layer("lru", 2, d_state=4, seed=3)
    u = Rng(4).normal((1, 6, 2))
    _, t1 = layer.forward(u, tape=True)
    clean = layer_backward(layer, t1, np.ones((1, 6, 2)))
    autograd._grad_fault = "nu_log"
    try:
        _, t2 = layer.forward(u, tape=True)
        dirty = layer_backward(layer, t2, np.ones((1, 6, 2)))
    finally:
        autograd._grad_fault = None
    np.testing.assert_allclose(dirty.params["nu_log"],
                               1.01 * clean.params["nu_log"], rtol=1e-12)
    np.testing.assert_array_equal(dirty.params["D"], clean.params["D"])
