"""Reverse-mode gradients for the linear recurrence and its layers.

The backward of x_k = a_k x_{k-1} + b_k u_k is itself a linear recurrence run
in reverse: with incoming cotangents gx_k,

    g_k = gx_k + conj(a_{k+1}) g_{k+1}
    grad_b_k = g_k,   grad_a_k = g_k * conj(x_{k-1}),   grad_x0 = conj(a_1) g_1.

Complex parameters use composite cotangents g_z = dL/dRe(z) + i dL/dIm(z), so
a holomorphic factor z = f(p) pulls back as g_p = conj(f'(p)) * g_z and a real
parameter t feeding z as g_t = Re(conj(dz/dt) * g_z). All layer backwards
route through this one scan pullback, which is why the sequential and
parallel forwards share a single backward implementation.

finite_diff_check is the tolerance oracle: central differences on a scalar
objective, compared against supplied analytic gradients per parameter path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _scan_kernels as _k
from .numerics import Rng
from .discretize import ZOH_SMALL_POLE_EPS, scheme_factors

__all__ = [
    "Tape",
    "TapeConsumed",
    "RecomputeTape",
    "GradBundle",
    "scan_forward",
    "scan_backward",
    "scheme_partials",
    "layer_backward",
    "FiniteDiffReport",
    "finite_diff_check",
    "check_layer_gradients",
]


class TapeConsumed(RuntimeError):
    """A tape's saved activations were already taken by a backward pass."""


class Tape:
    """One-shot container for activations saved by a forward pass.

    take() hands out the saved dict exactly once; a second call raises
    TapeConsumed. This makes accidental tape reuse (whose gradients would
    silently refer to stale activations after a parameter update) loud.
    """

    def __init__(self, kind: str, **saved):
        self.kind = kind
        self._saved = saved

    @property
    def consumed(self) -> bool:
        return self._saved is None

    def take(self) -> dict:
        if self._saved is None:
            raise TapeConsumed(
                f"tape for {self.kind!r} was already consumed by a backward pass"
            )
        saved, self._saved = self._saved, None
        return saved


class RecomputeTape(Tape):
    """Placeholder for a recompute-from-checkpoints schedule.

    Keeps the Tape interface so long-sequence training can later swap in
    activation recomputation without touching layer code; materialization is
    the only storage policy implemented today.
    """

    def __init__(self, kind: str, **saved):
        super().__init__(kind)
        raise NotImplementedError(
            "recompute-from-checkpoints storage is reserved; use Tape"
        )


@dataclass
class GradBundle:
    """Analytic gradients: one array per parameter path, plus grad wrt input."""

    params: dict[str, np.ndarray]
    u: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Scan-level forward/backward


def scan_forward(a, b, x0=None, mode="sequential", workers=1):
    """Run a scan and keep what its backward needs; returns (states, Tape)."""
    from . import scan as _scan

    if mode == "parallel":
        states = _scan.scan_parallel(a, b, x0, workers=workers)
    elif mode == "sequential":
        states = _scan.scan_sequential(a, b, x0)
    else:
        raise ValueError(f"mode must be 'sequential' or 'parallel', got {mode!r}")
    tape = Tape("scan", a=np.asarray(a), states=states, x0=x0)
    return states, tape


def _scan_pullback(a2, per_step, x2, x02, gx2):
    """Core reverse recurrence on flattened [L, N] arrays.

    a2: [N] (constant) or [L, N] (per-step); x2: forward states [L, N]; x02:
    initial state [N] or None (zeros); gx2: cotangents [L, N]. Returns
    (g [L, N], grad_a ([N] summed over steps when constant, else [L, N]),
    grad_x0 [N]).
    """
    L = gx2.shape[0]
    g = np.empty_like(gx2)
    if per_step:
        _k.backward_var(np.conj(a2), np.ascontiguousarray(gx2), g)
    else:
        _k.backward_const(np.conj(a2), np.ascontiguousarray(gx2), g)
    xprev = np.empty_like(x2)
    if x02 is None:
        xprev[0] = 0
    else:
        xprev[0] = x02
    xprev[1:] = x2[:-1]
    np.conj(xprev, out=xprev)
    if per_step:
        grad_a = g * xprev
        grad_x0 = np.conj(a2[0]) * g[0] if L else np.zeros_like(g[0])
    else:
        grad_a = np.einsum("ln,ln->n", g, xprev, optimize=True)
        grad_x0 = np.conj(a2) * g[0]
    return g, grad_a, grad_x0


def scan_backward(tape: Tape, grad_states):
    """Gradients of a recorded scan; returns (grad_a, grad_b, grad_x0).

    grad_a matches a's shape ([N] constant coefficients get the summed
    gradient; per-step coefficients get [L, ...]). grad_b is per-step.
    """
    saved = tape.take()
    a, states, x0 = saved["a"], saved["states"], saved["x0"]
    gx = np.asarray(grad_states)
    if gx.shape != states.shape:
        from .numerics import ShapeError

        raise ShapeError(
            f"grad_states shape {gx.shape} does not match states shape {states.shape}"
        )
    L = states.shape[0]
    lanes = states.shape[1:]
    x2 = states.reshape(L, -1)
    gx2 = np.ascontiguousarray(gx.reshape(L, -1), dtype=states.dtype)
    per_step = a.ndim == states.ndim
    a2 = np.ascontiguousarray(
        a.reshape(L, -1) if per_step else np.broadcast_to(a, lanes).reshape(-1),
        dtype=states.dtype,
    )
    x02 = None
    if x0 is not None:
        x02 = np.broadcast_to(np.asarray(x0, states.dtype), lanes).reshape(-1)
    g, ga, gx0 = _scan_pullback(a2, per_step, x2, x02, gx2)
    grad_b = g.reshape(states.shape)
    if per_step:
        grad_a = ga.reshape(states.shape)
    else:
        grad_a = ga.reshape(lanes)
        if a.shape != lanes:  # a was broadcast across leading lane axes
            keep = tuple(range(len(lanes) - a.ndim))
            grad_a = grad_a.sum(axis=keep) if keep else grad_a
    return grad_a, grad_b, gx0.reshape(lanes)


# ---------------------------------------------------------------------------
# Discretization partials (shared by the layer backwards)


def scheme_partials(scheme, lam, delta, abar, scale):
    """Partials of (abar, scale) wrt (lam, delta) for one scheme.

    Returns (d_abar/d_lam, d_abar/d_delta, d_scale/d_lam, d_scale/d_delta),
    broadcast like abar. delta enters pre-broadcast (same trailing shape used
    to build abar).
    """
    if scheme == "zoh":
        dal = delta * abar
        dad = lam * abar
        eps = ZOH_SMALL_POLE_EPS[np.dtype(lam.real.dtype)]
        small = np.abs(lam) < eps
        lam_safe = np.where(small, 1.0, lam)
        dsl = np.where(small, delta * delta / 2.0,
                       (delta * abar * lam - (abar - 1.0)) / (lam_safe * lam_safe))
        dsd = np.where(small, np.ones_like(abar), abar)
        return dal, dad, dsl, dsd
    if scheme == "bilinear":
        den = 1.0 - 0.5 * delta * lam
        den2 = den * den
        return (delta / den2, lam / den2,
                delta * delta / (2.0 * den2), 1.0 / den2)
    if scheme == "dirac":
        zero = np.zeros_like(abar)
        return delta * abar, lam * abar, zero, zero
    raise ValueError(f"unknown discretization scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Layer-level backward

# Test hook: when set to a parameter path, that gradient is scaled by 1.01 on
# the way out, which the finite-difference validation must flag.
_grad_fault: str | None = None


def layer_backward(layer, tape: Tape, grad_y) -> GradBundle:
    """Analytic gradients for one layer forward recorded on `tape`.

    grad_y matches the forward output [batch, length, d_model]. Returns a
    GradBundle whose params dict mirrors layer.parameters() and whose .u is
    the gradient with respect to the input sequence.
    """
    saved = tape.take()
    grads, grad_u = layer._backward(saved, grad_y)
    if _grad_fault is not None and _grad_fault in grads:
        grads[_grad_fault] = grads[_grad_fault] * 1.01
    return GradBundle(params=grads, u=grad_u)


# ---------------------------------------------------------------------------
# Finite-difference oracle


@dataclass
class FiniteDiffReport:
    """Worst-case comparison of analytic vs central-difference gradients."""

    rows: list  # (path, max_rel_for_path, analytic_at_worst, numeric_at_worst)
    max_rel: float
    worst_path: str
    tol: float
    passed: bool

    def __str__(self):
        lines = [f"{'parameter':24s} {'max rel err':>12s} {'analytic':>14s} {'numeric':>14s}"]
        for path, rel, ga, gn in self.rows:
            lines.append(f"{path:24s} {rel:12.3e} {ga:14.6e} {gn:14.6e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"max {self.max_rel:.3e} at {self.worst_path!r} "
                     f"(tol {self.tol:.1e}) -> {verdict}")
        return "\n".join(lines)


def finite_diff_check(forward, params, loss, analytic, h=1e-5, tol=1e-5,
                      atol=1e-8, max_elements=64, rng=None) -> FiniteDiffReport:
    """Compare analytic gradients against central differences.

    forward: nullary function producing outputs from the live `params` arrays
    (perturbed in place). loss: maps outputs to a float. analytic: dict of
    gradient arrays keyed like params. Each scalar entry is checked as
    |analytic - numeric| <= max(tol*|numeric|, atol); arrays larger than
    max_elements are subsampled deterministically. Returns a report with the
    max relative error and the offending parameter path.
    """
    rng = rng if rng is not None else Rng(20240817)
    floor = atol / tol

    def objective():
        return float(loss(forward()))

    rows = []
    max_rel, worst_path = 0.0, ""
    for path in params:
        arr = params[path]
        flat = arr.reshape(-1)
        ga = np.asarray(analytic[path]).reshape(-1)
        if ga.shape != flat.shape:
            raise ValueError(
                f"analytic[{path!r}] has {ga.size} elements, expected {flat.size}"
            )
        if flat.size > max_elements:
            idx = np.unique(rng.integers(0, flat.size, max_elements))
        else:
            idx = np.arange(flat.size)
        path_rel, path_ga, path_gn = 0.0, 0.0, 0.0
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            lp = objective()
            flat[i] = keep - h
            lm = objective()
            flat[i] = keep
            gn = (lp - lm) / (2.0 * h)
            rel = abs(float(ga[i]) - gn) / max(abs(gn), floor)
            if rel > path_rel:
                path_rel, path_ga, path_gn = rel, float(ga[i]), gn
        rows.append((path, path_rel, path_ga, path_gn))
        if path_rel > max_rel:
            max_rel, worst_path = path_rel, path
    return FiniteDiffReport(rows=rows, max_rel=max_rel, worst_path=worst_path,
                            tol=tol, passed=max_rel <= tol)


def check_layer_gradients(layer, u, *, mode="sequential", workers=1, deltas=None,
                          h=1e-5, tol=1e-5, rng=None) -> FiniteDiffReport:
    """End-to-end gradient check of one layer against finite differences.

    Builds a fixed quadratic objective 0.5*||y - y_ref||^2 (y_ref random so
    every gradient path is exercised), runs the analytic backward once, then
    compares every parameter plus the input sequence.
    """
    rng = rng if rng is not None else Rng(99)
    u = np.asarray(u, layer.rdt)
    y0, tape = layer.forward(u, mode, workers=workers, deltas=deltas, tape=True)
    y_ref = np.asarray(rng.normal(y0.shape), layer.rdt)

    def forward():
        return layer.forward(u, mode, workers=workers, deltas=deltas)

    def loss(y):
        d = np.asarray(y, np.float64) - y_ref
        return 0.5 * float(np.sum(d * d))

    bundle = layer_backward(layer, tape, y0 - y_ref)
    params = dict(layer.parameters())
    analytic = dict(bundle.params)
    params["u"] = u
    analytic["u"] = bundle.u
    return finite_diff_check(forward, params, loss, analytic, h=h, tol=tol, rng=rng)
