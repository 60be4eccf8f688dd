"""The layer zoo: five parameterizations of the diagonal linear recurrence

    x_k = a_k * x_{k-1} + b_k u_k,      y_k = c_k x_k + d u_k

with shared execution machinery. LTI members (constant coefficients):

* s4d  — SISO: d_model independent single-input state spaces, complex
         diagonal a = -exp(lambda_re_log) + i*lambda_im, continuous-time,
         discretized by a pluggable scheme (zoh / bilinear / dirac).
* s5   — MIMO: one shared state space mixing all channels; state stored as
         d_state/2 conjugate-pair representatives, output 2*Re(C x) + D u.
* lru  — MIMO, parameterized directly in discrete time:
         lambda = exp(-exp(nu_log) + i*exp(theta_log)), input normalized by
         gamma = exp(gamma_log); no discretization step.

LTV members (input-dependent coefficients):

* s6    — SISO selective: delta, B, C are linear functions of the current
          input; per-step zero-order hold on a with an Euler input map.
* rglru — gated: per-step retention a_k = a^(c*r_k) with sigmoid gates on
          recurrence and input; state width equals d_model; y = x.

Every layer runs in three numerically-equivalent modes: `sequential`
(streamed blocks, one pass), `parallel` (chunked two-pass scan over worker
threads), and single-`step` (O(1) per token on preallocated buffers). The
sequential/parallel forwards stream fixed-size blocks through the scan
kernels, so the hidden state is never materialized at
[batch, length, d_model, d_state]; tape=True switches to a materializing
forward that records what the analytic backward needs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _scan_kernels as _k
from . import scan as _scan
from .autograd import Tape, layer_backward
from .discretize import scheme_factors
from .numerics import Rng, ShapeError, alloc, complex_dtype, real_dtype, sigmoid, softplus

__all__ = [
    "LAYER_KINDS",
    "SCHEMES_BY_KIND",
    "UnknownLayer",
    "LayerConfig",
    "LayerStepState",
    "LinearRecurrence",
    "S4D",
    "S5",
    "LRU",
    "S6",
    "RGLRU",
    "make_layer",
    "init_layer",
    "lti_forward",
    "ltv_forward",
    "layer_step",
]

LAYER_KINDS = ("s4d", "s5", "lru", "s6", "rglru")

# Discretization schemes a kind accepts; empty tuple = discrete-native /
# structurally fixed (selecting one only warns).
SCHEMES_BY_KIND = {
    "s4d": ("zoh", "bilinear", "dirac"),
    "s5": ("zoh", "bilinear", "dirac"),
    "lru": (),
    "s6": (),
    "rglru": (),
}

# Streamed forwards work on blocks of this many steps per scan-kernel call;
# bounds per-thread scratch at block * lanes regardless of sequence length.
STREAM_BLOCK = 512


class UnknownLayer(ValueError):
    """Requested layer kind is not in the registry."""


@dataclass
class LayerConfig:
    """Constructor arguments shared by every kind (extras carries per-kind knobs)."""

    d_model: int
    d_state: int | None = None  # per-kind default (64; rglru is fixed at d_model)
    discretization: str | None = None
    asynchronous: bool = False
    dtype: str = "f64"
    extras: dict = field(default_factory=dict)


class LayerStepState:
    """Per-session step-mode carry: state planes plus preallocated scratch.

    Created by Layer.init_state(); all buffers come from the instrumented
    allocator, and step() never allocates afterwards. Coefficient caches are
    snapshotted from the layer's parameters at creation time.
    """

    def __init__(self, kind: str, batch: int):
        self.kind = kind
        self.batch = batch
        self.k = 0


def _lanes(arr: np.ndarray, batch: int) -> np.ndarray:
    """Tile per-state coefficients across the batch axis, batch-major flat."""
    return np.tile(arr.reshape(-1), batch)


def _to_time_major(x: np.ndarray) -> np.ndarray:
    """[batch, length, ...] -> contiguous [length, batch*...]."""
    xt = np.ascontiguousarray(np.moveaxis(x, 1, 0))
    return xt.reshape(xt.shape[0], -1)


# ---------------------------------------------------------------------------
# Streamed execution driver (shared by the non-tape forwards).
#
# build(k0, k1) -> (a_blk or None, b_blk, ctx): per-step coefficients for one
# block as [k1-k0, N] time-major arrays (a_blk None when the layer passed a
# constant a). project(k0, k1, states, ctx) consumes the block's states.


def _apply_range(s, e, x_in, a_const, build, project, dt):
    x = x_in
    for k0 in range(s, e, STREAM_BLOCK):
        k1 = min(k0 + STREAM_BLOCK, e)
        a_blk, b_blk, ctx = build(k0, k1)
        out = np.empty_like(b_blk)
        if a_const is None:
            _k.scan_var(a_blk, b_blk, x, out)
        else:
            _k.scan_const(a_const, b_blk, x, out)
        project(k0, k1, out, ctx)
        x = out[-1].copy()
    return x


def _compose_range(s, e, N, a_const, build, dt):
    acc_a = np.ones(N, dt)
    acc_b = np.zeros(N, dt)
    for k0 in range(s, e, STREAM_BLOCK):
        k1 = min(k0 + STREAM_BLOCK, e)
        a_blk, b_blk, _ = build(k0, k1)
        if a_const is None:
            _k.compose_var(a_blk, b_blk, acc_a, acc_b)
        else:
            _k.compose_const(a_const, b_blk, acc_a, acc_b)
    return acc_a, acc_b


def _drive(L, N, dt, mode, workers, a_const, build, project):
    """Run the recurrence over [0, L) in streamed blocks; returns final state [N]."""
    x0 = np.zeros(N, dt)
    chunks = _scan.plan_chunks(L, workers) if mode == "parallel" else [(0, L)]
    if len(chunks) == 1:
        return _apply_range(0, L, x0, a_const, build, project, dt)
    pool = _scan._pool(workers)
    comps = list(pool.map(
        lambda c: _compose_range(c[0], c[1], N, a_const, build, dt), chunks[:-1]
    ))
    entering = [x0]
    for acc_a, acc_b in comps:
        entering.append(acc_a * entering[-1] + acc_b)
    finals = list(pool.map(
        lambda i: _apply_range(chunks[i][0], chunks[i][1], entering[i],
                               a_const, build, project, dt),
        range(len(chunks)),
    ))
    return finals[-1]


# ---------------------------------------------------------------------------


class LinearRecurrence:
    """Base class: validation, mode dispatch, and the shared driver plumbing."""

    kind: str = ""
    lti: bool = True
    continuous: bool = True  # has a delta / discretization pipeline

    def __init__(self, d_model, d_state, discretization, asynchronous, dtype):
        if d_model < 1 or d_state < 1:
            raise ValueError(f"extents must be positive, got d_model={d_model}, d_state={d_state}")
        self.d_model = int(d_model)
        self.d_state = int(d_state)
        self.asynchronous = bool(asynchronous)
        self.dtype = "f32" if real_dtype(dtype) == np.dtype(np.float32) else "f64"
        self.rdt = real_dtype(dtype)
        self.cdt = complex_dtype(dtype)
        if self.continuous:
            if discretization is None:
                discretization = "dirac" if self.asynchronous else "zoh"
            if discretization not in SCHEMES_BY_KIND[self.kind]:
                raise ValueError(
                    f"{self.kind} supports discretizations {SCHEMES_BY_KIND[self.kind]}, got {discretization!r}"
                )
        elif discretization is not None:
            warnings.warn(
                f"{self.kind} is parameterized directly in discrete time; "
                f"discretization={discretization!r} is ignored"
            )
            discretization = None
        self.discretization = discretization

    # -- public API ---------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to the real parameter planes, in a stable order."""
        raise NotImplementedError

    def forward(self, u, mode="sequential", *, workers=1, deltas=None,
                tape=False, return_state=False):
        """Batched forward over u [batch, length, d_model].

        mode: "sequential" or "parallel" (chunked scan over `workers` threads).
        deltas: per-step intervals [length] or [batch, length] for
        asynchronous/event-stream inputs (continuous-time LTI layers only);
        the effective interval is deltas[k] * exp(log_delta).
        tape=True additionally returns a Tape for the analytic backward.
        return_state=True additionally returns a step-ready LayerStepState
        holding the state after the last step (prefill).
        """
        u = self._check_u(u)
        if mode not in ("sequential", "parallel"):
            raise ValueError(f"mode must be 'sequential' or 'parallel', got {mode!r}")
        B, L, _ = u.shape
        deltas = self._check_deltas(deltas, B, L)
        if tape:
            y, tp, xf = self._forward_tape(u, mode, workers, deltas)
        else:
            y, xf = self._forward_stream(u, mode, workers, deltas)
        if not (tape or return_state):
            return y
        out = [y]
        if tape:
            out.append(tp)
        if return_state:
            st = self.init_state(B)
            self._load_state(st, xf, B)
            st.k = L
            out.append(st)
        return tuple(out)

    def step(self, state: LayerStepState, u_k, delta_k=None):
        """One recurrence update on preallocated buffers; returns (y_k, state).

        u_k: [batch, d_model] (or [d_model] for batch-1 states). The returned
        y_k aliases a state buffer and is valid until the next step call.
        """
        squeeze = np.ndim(u_k) == 1
        uk = np.asarray(u_k, self.rdt)
        if squeeze:
            uk = uk[None]
        if uk.shape != (state.batch, self.d_model):
            raise ShapeError(
                f"u_k shape {np.shape(u_k)} does not match state batch {state.batch} x d_model {self.d_model}"
            )
        if delta_k is not None and not (self.continuous and self.lti):
            raise ValueError(f"{self.kind} does not accept per-step deltas")
        y = self._step(state, uk, delta_k)
        state.k += 1
        return (y[0] if squeeze else y), state

    def init_state(self, batch: int = 1) -> LayerStepState:
        """Allocate a zeroed step-mode state (and scratch) for `batch` sequences."""
        raise NotImplementedError

    def backward(self, tape: Tape, grad_y):
        """Analytic gradients; see autograd.layer_backward."""
        return layer_backward(self, tape, grad_y)

    # -- shared plumbing ----------------------------------------------------

    def _check_u(self, u):
        u = np.asarray(u)
        if u.ndim != 3 or u.shape[2] != self.d_model:
            raise ShapeError(
                f"u must be [batch, length, d_model={self.d_model}], got shape {u.shape}"
            )
        if u.shape[1] < 1:
            raise ShapeError("length must be >= 1")
        return np.ascontiguousarray(u, dtype=self.rdt)

    def _check_deltas(self, deltas, B, L):
        if deltas is None:
            return None
        if not (self.lti and self.continuous):
            raise ValueError(
                f"per-step deltas apply to continuous-time LTI layers only, not {self.kind}"
            )
        d = np.asarray(deltas, dtype=self.rdt)
        if d.ndim == 1:
            d = np.broadcast_to(d[None, :], (B, L))
        if d.shape != (B, L):
            raise ShapeError(f"deltas must be [length] or [batch, length], got {np.shape(deltas)}")
        if np.any(d < 0):
            raise ValueError("deltas must be non-negative")
        return d

    def _forward_stream(self, u, mode, workers, deltas):
        B, L, _ = u.shape
        ctx = self._stream_setup(u, deltas)
        a_const = None if deltas is not None or not self.lti else self._a_lanes(ctx, B)
        y = np.empty((B, L, self.d_model), self.rdt)
        xf = _drive(
            L, self._lane_count(B), self._scan_dtype(), mode, workers, a_const,
            lambda k0, k1: self._stream_build(ctx, u, deltas, k0, k1),
            lambda k0, k1, states, bctx: self._stream_project(ctx, u, y, k0, k1, states, bctx),
        )
        return y, xf

    def _scan_dtype(self):
        return self.cdt

    # Subclass hooks: _lane_count, _a_lanes, _stream_setup, _stream_build,
    # _stream_project, _forward_tape, _backward, _step, _load_state.


# ---------------------------------------------------------------------------
# Parameter initialization helpers


def _normal_pair(rng, shape, std, dt):
    g = rng.split(2)
    return (np.asarray(g[0].normal(shape) * std, dt),
            np.asarray(g[1].normal(shape) * std, dt))


def _log_delta_init(rng, shape, dt):
    return np.asarray(rng.uniform(np.log(1e-3), np.log(1e-1), shape), dt)


def _s4dlin_pattern(d_model_rows, n, dt):
    """lambda_re_log = log(1/2), lambda_im = pi*i over the state index."""
    re_log = np.full((d_model_rows, n) if d_model_rows else (n,), np.log(0.5), dt)
    im = np.pi * np.arange(n, dtype=dt)
    if d_model_rows:
        im = np.broadcast_to(im, (d_model_rows, n)).copy()
    return re_log, im


# ---------------------------------------------------------------------------


class S4D(LinearRecurrence):
    """Per-channel SISO diagonal state space (continuous-time, complex)."""

    kind = "s4d"
    lti = True
    continuous = True

    def __init__(self, d_model, d_state=None, discretization=None, *,
                 asynchronous=False, dtype="f64", rng=None, seed=0):
        super().__init__(d_model, 64 if d_state is None else d_state,
                         discretization, asynchronous, dtype)
        rng = rng if rng is not None else Rng(seed)
        r_b, r_c, r_d = rng.split(3)
        m, n = self.d_model, self.d_state
        dt = self.rdt
        self.lambda_re_log, self.lambda_im = _s4dlin_pattern(m, n, dt)
        # SISO input map has fan-in 1; output contracts over d_state.
        self.b_re, self.b_im = _normal_pair(r_b, (m, n), 1.0, dt)
        self.c_re, self.c_im = _normal_pair(r_c, (m, n), 1.0 / np.sqrt(n), dt)
        self.d = np.ones(m, dt)
        self.log_delta = _log_delta_init(r_d, m, dt)

    def parameters(self):
        return {
            "lambda_re_log": self.lambda_re_log, "lambda_im": self.lambda_im,
            "b.re": self.b_re, "b.im": self.b_im,
            "c.re": self.c_re, "c.im": self.c_im,
            "d": self.d, "log_delta": self.log_delta,
        }

    # -- coefficient assembly ------------------------------------------------

    def _lam(self):
        lam = np.empty((self.d_model, self.d_state), self.cdt)
        lam.real = -np.exp(self.lambda_re_log)
        lam.imag = self.lambda_im
        return lam

    def _coeffs(self):
        """(lam [m,n], delta [m], abar [m,n], scale [m,n]) for uniform spacing."""
        lam = self._lam()
        delta = np.exp(self.log_delta)
        abar, scale = scheme_factors(self.discretization, lam, delta[:, None])
        return lam, delta, np.asarray(abar, self.cdt), np.asarray(scale, self.cdt)

    def _psi(self, scale):
        b = np.empty((self.d_model, self.d_state), self.cdt)
        b.real, b.imag = self.b_re, self.b_im
        return scale * b

    def _step_coeffs(self, deltas):
        """Per-step (abar, psi) [B,L,m,n] for event-stream spacing."""
        lam = self._lam()
        delta = np.exp(self.log_delta)
        d_eff = (deltas * 1.0)[:, :, None] * delta  # [B,L,m]
        abar, scale = scheme_factors(self.discretization, lam, d_eff[..., None])
        return np.asarray(abar, self.cdt), self._psi(np.asarray(scale, self.cdt))

    # -- streamed forward ----------------------------------------------------

    def _lane_count(self, B):
        return B * self.d_model * self.d_state

    def _stream_setup(self, u, deltas):
        lam, delta, abar, scale = self._coeffs()
        ctx = {"abar": abar, "psi": self._psi(scale), "lam": lam, "delta": delta}
        if deltas is not None:
            # per-step psi only varies for schemes with a delta-dependent
            # input scale; dirac keeps psi constant.
            ctx["const_psi"] = self.discretization == "dirac"
        return ctx

    def _a_lanes(self, ctx, B):
        return _lanes(ctx["abar"], B)

    def _stream_build(self, ctx, u, deltas, k0, k1):
        blk = k1 - k0
        B = u.shape[0]
        ub = u[:, k0:k1]  # [B,blk,m]
        if deltas is None:
            w = ctx["psi"] * ub[..., None]  # [B,blk,m,n] complex
            return None, _to_time_major(w), None
        d_eff = (deltas[:, k0:k1])[:, :, None] * ctx["delta"]  # [B,blk,m]
        abar, scale = scheme_factors(self.discretization, ctx["lam"], d_eff[..., None])
        if ctx["const_psi"]:
            w = ctx["psi"] * ub[..., None]
        else:
            w = self._psi(np.asarray(scale, self.cdt)) * ub[..., None]
        return _to_time_major(np.asarray(abar, self.cdt)), _to_time_major(w), None

    def _stream_project(self, ctx, u, y, k0, k1, states, bctx):
        B = u.shape[0]
        xs = states.reshape(k1 - k0, B, self.d_model, self.d_state)
        c = self.c_re + 0j
        c = c.astype(self.cdt)
        c.imag = self.c_im
        yk = np.einsum("lbhn,hn->blh", xs, c, optimize=True).real
        y[:, k0:k1] = yk + self.d * u[:, k0:k1]

    # -- tape forward --------------------------------------------------------

    def _forward_tape(self, u, mode, workers, deltas):
        B, L, m = u.shape
        n = self.d_state
        lam, delta, abar, scale = self._coeffs()
        if deltas is None:
            w = self._psi(scale) * u[..., None]
            a_arg = _lanes(abar, B)
        else:
            abar_k, psi_k = self._step_coeffs(deltas)
            w = psi_k * u[..., None]
            a_arg = _to_time_major(abar_k)
        bt = _to_time_major(w)
        run = _scan.scan_parallel if mode == "parallel" else _scan.scan_sequential
        xt = (run(a_arg, bt, workers=workers) if mode == "parallel" else run(a_arg, bt))
        xt = xt.reshape(L, B, m, n)
        c = np.empty((m, n), self.cdt)
        c.real, c.imag = self.c_re, self.c_im
        y = np.einsum("lbhn,hn->blh", xt, c, optimize=True).real + self.d * u
        y = np.ascontiguousarray(y, self.rdt)
        tp = Tape(self.kind, u=u, xt=xt, deltas=deltas)
        return y, tp, xt[-1].reshape(-1)

    # -- backward ------------------------------------------------------------

    def _backward(self, saved, gy):
        from .autograd import _scan_pullback, scheme_partials

        u, xt, deltas = saved["u"], saved["xt"], saved["deltas"]
        B, L, m = u.shape
        n = self.d_state
        lam, delta, abar, scale = self._coeffs()
        c = np.empty((m, n), self.cdt)
        c.real, c.imag = self.c_re, self.c_im
        gy = np.asarray(gy, self.rdt)

        gd = np.einsum("blh,blh->h", gy, u, optimize=True)
        gu = gy * self.d
        gyt = np.moveaxis(gy, 1, 0)  # [L,B,m] view
        gc = np.einsum("lbh,lbhn->hn", gyt, np.conj(xt), optimize=True)
        gxt = gyt[..., None] * np.conj(c)  # [L,B,m,n]

        xt2 = xt.reshape(L, -1)
        gxt2 = np.ascontiguousarray(gxt.reshape(L, -1))
        per_step = deltas is not None
        if per_step:
            abar_k, psi_k = self._step_coeffs(deltas)
            a_arg = _to_time_major(abar_k)
        else:
            a_arg = _lanes(abar, B)
        g2, ga, _ = _scan_pullback(a_arg, per_step, xt2, None, gxt2)
        gw = g2.reshape(L, B, m, n)

        b = np.empty((m, n), self.cdt)
        b.real, b.imag = self.b_re, self.b_im
        if not per_step:
            gabar = ga.reshape(B, m, n).sum(axis=0)
            psi = scale * b
            gpsi = np.einsum("lbhn,blh->hn", gw, u, optimize=True)
            gu += np.einsum("lbhn,hn->blh", gw, np.conj(psi), optimize=True).real
            gscale = np.conj(b) * gpsi
            gb = np.conj(scale) * gpsi
            dal, dad, dsl, dsd = scheme_partials(
                self.discretization, lam, delta[:, None], abar, scale)
            glam = np.conj(dal) * gabar + np.conj(dsl) * gscale
            gdelta = ((np.conj(dad) * gabar).real + (np.conj(dsd) * gscale).real).sum(-1)
            glog_delta = gdelta * delta
        else:
            ga_k = np.moveaxis(ga.reshape(L, B, m, n), 0, 1)  # [B,L,m,n]
            gw_b = np.moveaxis(gw, 0, 1)
            d_eff = deltas[:, :, None] * delta  # [B,L,m]
            _, scale_k = scheme_factors(self.discretization, lam, d_eff[..., None])
            scale_k = np.asarray(scale_k, self.cdt)
            abar_k_b = np.moveaxis(abar_k, 0, 0)  # already [B,L,m,n]
            gpsi_k = gw_b * u[..., None]
            gu += np.einsum("blhn,blhn->blh", gw_b, np.conj(psi_k), optimize=True).real
            gscale_k = np.conj(b) * gpsi_k
            gb = (np.conj(scale_k) * gpsi_k).sum(axis=(0, 1))
            dal, dad, dsl, dsd = scheme_partials(
                self.discretization, lam, d_eff[..., None], abar_k_b, scale_k)
            glam = (np.conj(dal) * ga_k + np.conj(dsl) * gscale_k).sum(axis=(0, 1))
            gdeff = ((np.conj(dad) * ga_k).real + (np.conj(dsd) * gscale_k).real).sum(-1)
            glog_delta = np.einsum("blh,bl->h", gdeff, deltas, optimize=True) * delta

        grads = {
            "lambda_re_log": -np.exp(self.lambda_re_log) * glam.real,
            "lambda_im": np.ascontiguousarray(glam.imag),
            "b.re": np.ascontiguousarray(gb.real),
            "b.im": np.ascontiguousarray(gb.imag),
            "c.re": np.ascontiguousarray(gc.real),
            "c.im": np.ascontiguousarray(gc.imag),
            "d": gd,
            "log_delta": glog_delta,
        }
        return grads, gu

    # -- step ----------------------------------------------------------------

    def init_state(self, batch: int = 1) -> LayerStepState:
        st = LayerStepState(self.kind, batch)
        m, n, dt = self.d_model, self.d_state, self.rdt
        lam, delta, abar, scale = self._coeffs()
        psi = self._psi(scale)
        for name in ("x_re", "x_im", "t1", "t2", "t3", "t4", "v_re", "v_im"):
            setattr(st, name, alloc((batch, m, n), dt))
        st.x_re[...] = 0
        st.x_im[...] = 0
        for name, arr in (("abar_re", abar.real), ("abar_im", abar.imag),
                          ("psi_re", psi.real), ("psi_im", psi.imag),
                          ("lam_re", lam.real), ("lam_im", lam.imag)):
            buf = alloc((m, n), dt)
            buf[...] = arr
            st.__dict__[name] = buf
        st.delta = alloc(m, dt)
        st.delta[...] = delta
        st.y = alloc((batch, m), dt)
        st.ty = alloc((batch, m), dt)
        st.d_eff = alloc(m, dt)
        st.aw = alloc((m, n), dt)
        return st

    def _load_state(self, st, xf, B):
        x = xf.reshape(B, self.d_model, self.d_state)
        st.x_re[...] = x.real
        st.x_im[...] = x.imag

    def _step(self, st, uk, delta_k):
        ar, ai = st.abar_re, st.abar_im
        if delta_k is not None:
            if self.discretization != "dirac":
                raise NotImplementedError(
                    "per-step deltas in step mode require the dirac scheme"
                )
            ar, ai = st.t3, st.t4  # recompute abar in scratch
            np.multiply(st.delta, float(delta_k), out=st.d_eff)
            np.multiply(st.lam_re, st.d_eff[:, None], out=st.aw)
            np.exp(st.aw, out=st.aw)  # magnitude
            np.multiply(st.lam_im, st.d_eff[:, None], out=ai)  # phase
            np.cos(ai, out=ar)
            np.multiply(ar, st.aw, out=ar)
            np.sin(ai, out=ai)
            np.multiply(ai, st.aw, out=ai)
        u3 = uk[:, :, None]
        np.multiply(st.psi_re, u3, out=st.v_re)
        np.multiply(st.psi_im, u3, out=st.v_im)
        np.multiply(st.x_re, ar, out=st.t1)
        np.multiply(st.x_im, ai, out=st.t2)
        np.subtract(st.t1, st.t2, out=st.t1)
        np.add(st.t1, st.v_re, out=st.t1)
        np.multiply(st.x_im, ar, out=st.t2)
        np.multiply(st.x_re, ai, out=st.v_re)  # v_re consumed; reuse
        np.add(st.t2, st.v_re, out=st.t2)
        np.add(st.t2, st.v_im, out=st.t2)
        st.x_re, st.t1 = st.t1, st.x_re
        st.x_im, st.t2 = st.t2, st.x_im
        np.multiply(st.x_re, self.c_re, out=st.v_re)
        np.multiply(st.x_im, self.c_im, out=st.v_im)
        np.subtract(st.v_re, st.v_im, out=st.v_re)
        np.sum(st.v_re, axis=2, out=st.y)
        np.multiply(uk, self.d, out=st.ty)
        np.add(st.y, st.ty, out=st.y)
        return st.y


class _MIMOBase(LinearRecurrence):
    """Shared machinery for S5 and LRU: x [*, P] lanes, y from Re(C x) + D u.

    Subclasses define _abar_scale() -> (abar [P], input_scale [P] complex or
    real) and OUT_SCALE (1 or 2 for conjugate-pair doubling).
    """

    OUT_SCALE = 1.0

    @property
    def _P(self):
        raise NotImplementedError

    def _B_mat(self):
        Bm = np.empty((self._P, self.d_model), self.cdt)
        Bm.real, Bm.imag = self.B_re, self.B_im
        return Bm

    def _C_mat(self):
        Cm = np.empty((self.d_model, self._P), self.cdt)
        Cm.real, Cm.imag = self.C_re, self.C_im
        return Cm

    def _lane_count(self, B):
        return B * self._P

    def _stream_setup(self, u, deltas):
        abar, scale, extra = self._abar_scale()
        Bs = np.asarray(scale)[:, None] * self._B_mat()  # scale folded into B
        return {"abar": abar, "scale": scale, "Bs": Bs, "C": self._C_mat(), **extra}

    def _a_lanes(self, ctx, B):
        return _lanes(ctx["abar"], B)

    def _stream_build(self, ctx, u, deltas, k0, k1):
        ub = u[:, k0:k1]
        if deltas is None:
            v = ub @ ctx["Bs"].T
            return None, _to_time_major(v), None
        d_eff = (deltas[:, k0:k1])[:, :, None] * ctx["delta"]  # [B,blk,P]
        abar, scale = scheme_factors(self.discretization, ctx["lam"], d_eff)
        v = np.asarray(scale, self.cdt) * (ub @ self._B_mat().T)
        return _to_time_major(np.asarray(abar, self.cdt)), _to_time_major(v), None

    def _stream_project(self, ctx, u, y, k0, k1, states, bctx):
        B = u.shape[0]
        xs = states.reshape(k1 - k0, B, self._P)
        yk = self.OUT_SCALE * np.einsum("lbp,hp->blh", xs, ctx["C"], optimize=True).real
        y[:, k0:k1] = yk + self.D * u[:, k0:k1]

    def _shared_tape_forward(self, u, mode, workers, deltas):
        B, L, m = u.shape
        abar, scale, extra = self._abar_scale()
        bu = u @ self._B_mat().T  # [B,L,P] complex
        if deltas is None:
            v = np.asarray(scale) * bu
            a_arg = _lanes(abar, B)
        else:
            d_eff = deltas[:, :, None] * extra["delta"]
            abar_k, scale_k = scheme_factors(self.discretization, extra["lam"], d_eff)
            v = np.asarray(scale_k, self.cdt) * bu
            a_arg = _to_time_major(np.asarray(abar_k, self.cdt))
        bt = _to_time_major(v)
        run = _scan.scan_parallel if mode == "parallel" else _scan.scan_sequential
        xt = (run(a_arg, bt, workers=workers) if mode == "parallel" else run(a_arg, bt))
        xt = xt.reshape(L, B, self._P)
        C = self._C_mat()
        y = self.OUT_SCALE * np.einsum("lbp,hp->blh", xt, C, optimize=True).real + self.D * u
        y = np.ascontiguousarray(y, self.rdt)
        tp = Tape(self.kind, u=u, xt=xt, bu=bu, deltas=deltas)
        return y, tp, xt[-1].reshape(-1)

    def _forward_tape(self, u, mode, workers, deltas):
        return self._shared_tape_forward(u, mode, workers, deltas)

    def _mimo_head_pullback(self, gy, xt, u):
        """Gradients through y = OUT_SCALE*Re(C x) + D u (returns gxt too)."""
        s = self.OUT_SCALE
        C = self._C_mat()
        gD = np.einsum("blh,blh->h", gy, u, optimize=True)
        gu = gy * self.D
        gC = s * np.einsum("blh,lbp->hp", gy, np.conj(xt), optimize=True)
        gxt = s * np.einsum("blh,hp->lbp", gy, np.conj(C), optimize=True)
        return gD, gu, gC, gxt

    def _mimo_input_pullback(self, gbu, u):
        gB = np.einsum("lbp,blh->ph", gbu, u, optimize=True)
        gu_add = np.einsum("lbp,ph->blh", gbu, np.conj(self._B_mat()), optimize=True).real
        return gB, gu_add

    # -- step ---------------------------------------------------------------

    def init_state(self, batch: int = 1) -> LayerStepState:
        st = LayerStepState(self.kind, batch)
        P, m, dt = self._P, self.d_model, self.rdt
        abar, scale, extra = self._abar_scale()
        Bs = np.asarray(scale)[:, None] * self._B_mat()
        C = self._C_mat()
        for name in ("x_re", "x_im", "t1", "t2", "t3", "t4", "bu_re", "bu_im"):
            setattr(st, name, alloc((batch, P), dt))
        st.x_re[...] = 0
        st.x_im[...] = 0
        for name, arr in (("abar_re", abar.real), ("abar_im", abar.imag)):
            buf = alloc(P, dt)
            buf[...] = arr
            st.__dict__[name] = buf
        for name, arr in (("BsT_re", Bs.real.T), ("BsT_im", Bs.imag.T)):
            buf = alloc((m, P), dt)
            buf[...] = arr
            st.__dict__[name] = buf
        for name, arr in (("CT_re", C.real.T), ("CT_im", C.imag.T)):
            buf = alloc((P, m), dt)
            buf[...] = arr
            st.__dict__[name] = buf
        st.y = alloc((batch, m), dt)
        st.ty = alloc((batch, m), dt)
        if self.continuous:
            st.lam_re = alloc(P, dt)
            st.lam_im = alloc(P, dt)
            st.lam_re[...] = extra["lam"].real
            st.lam_im[...] = extra["lam"].imag
            st.delta = alloc(P, dt)
            st.delta[...] = extra["delta"]
            st.d_eff = alloc(P, dt)
            st.aw = alloc(P, dt)
        return st

    def _load_state(self, st, xf, B):
        x = xf.reshape(B, self._P)
        st.x_re[...] = x.real
        st.x_im[...] = x.imag

    def _step(self, st, uk, delta_k):
        ar, ai = st.abar_re, st.abar_im
        if delta_k is not None:
            if self.discretization != "dirac":
                raise NotImplementedError(
                    "per-step deltas in step mode require the dirac scheme"
                )
            ar, ai = st.t3, st.t4
            np.multiply(st.delta, float(delta_k), out=st.d_eff)
            np.multiply(st.lam_re, st.d_eff, out=st.aw)
            np.exp(st.aw, out=st.aw)
            np.multiply(st.lam_im, st.d_eff, out=ai)
            np.cos(ai, out=ar)
            np.multiply(ar, st.aw, out=ar)
            np.sin(ai, out=ai)
            np.multiply(ai, st.aw, out=ai)
        np.matmul(uk, st.BsT_re, out=st.bu_re)
        np.matmul(uk, st.BsT_im, out=st.bu_im)
        np.multiply(st.x_re, ar, out=st.t1)
        np.multiply(st.x_im, ai, out=st.t2)
        np.subtract(st.t1, st.t2, out=st.t1)
        np.add(st.t1, st.bu_re, out=st.t1)
        np.multiply(st.x_im, ar, out=st.t2)
        np.multiply(st.x_re, ai, out=st.bu_re)  # consumed; reuse
        np.add(st.t2, st.bu_re, out=st.t2)
        np.add(st.t2, st.bu_im, out=st.t2)
        st.x_re, st.t1 = st.t1, st.x_re
        st.x_im, st.t2 = st.t2, st.x_im
        np.matmul(st.x_re, st.CT_re, out=st.y)
        np.matmul(st.x_im, st.CT_im, out=st.ty)
        np.subtract(st.y, st.ty, out=st.y)
        if self.OUT_SCALE != 1.0:
            np.multiply(st.y, self.OUT_SCALE, out=st.y)
        np.multiply(uk, self.D, out=st.ty)
        np.add(st.y, st.ty, out=st.y)
        return st.y


class S5(_MIMOBase):
    """MIMO diagonal state space, conjugate-pair storage, y = 2 Re(C x) + D u."""

    kind = "s5"
    lti = True
    continuous = True
    OUT_SCALE = 2.0

    def __init__(self, d_model, d_state=None, discretization=None, *,
                 asynchronous=False, dtype="f64", rng=None, seed=0):
        d_state = 64 if d_state is None else d_state
        if d_state % 2:
            raise ValueError(
                f"s5 stores conjugate pairs and needs even d_state, got {d_state}"
            )
        super().__init__(d_model, d_state, discretization, asynchronous, dtype)
        rng = rng if rng is not None else Rng(seed)
        r_b, r_c, r_d = rng.split(3)
        m, P, dt = self.d_model, d_state // 2, self.rdt
        self.lambda_re_log, self.lambda_im = _s4dlin_pattern(0, P, dt)
        self.B_re, self.B_im = _normal_pair(r_b, (P, m), 1.0 / np.sqrt(m), dt)
        self.C_re, self.C_im = _normal_pair(r_c, (m, P), 1.0 / np.sqrt(P), dt)
        self.D = np.ones(m, dt)
        self.log_delta = _log_delta_init(r_d, P, dt)

    @property
    def _P(self):
        return self.d_state // 2

    def parameters(self):
        return {
            "lambda_re_log": self.lambda_re_log, "lambda_im": self.lambda_im,
            "B.re": self.B_re, "B.im": self.B_im,
            "C.re": self.C_re, "C.im": self.C_im,
            "D": self.D, "log_delta": self.log_delta,
        }

    def _lam(self):
        lam = np.empty(self._P, self.cdt)
        lam.real = -np.exp(self.lambda_re_log)
        lam.imag = self.lambda_im
        return lam

    def _abar_scale(self):
        lam = self._lam()
        delta = np.exp(self.log_delta)
        abar, scale = scheme_factors(self.discretization, lam, delta)
        return (np.asarray(abar, self.cdt), np.asarray(scale, self.cdt),
                {"lam": lam, "delta": delta})

    def _backward(self, saved, gy):
        from .autograd import _scan_pullback, scheme_partials

        u, xt, bu, deltas = saved["u"], saved["xt"], saved["bu"], saved["deltas"]
        B, L, m = u.shape
        P = self._P
        lam = self._lam()
        delta = np.exp(self.log_delta)
        abar, scale = scheme_factors(self.discretization, lam, delta)
        abar = np.asarray(abar, self.cdt)
        scale = np.asarray(scale, self.cdt)
        gy = np.asarray(gy, self.rdt)

        gD, gu, gC, gxt = self._mimo_head_pullback(gy, xt, u)
        per_step = deltas is not None
        if per_step:
            d_eff = deltas[:, :, None] * delta
            abar_k, scale_k = scheme_factors(self.discretization, lam, d_eff)
            a_arg = _to_time_major(np.asarray(abar_k, self.cdt))
        else:
            a_arg = _lanes(abar, B)
        g2, ga, _ = _scan_pullback(
            a_arg, per_step, xt.reshape(L, -1), None,
            np.ascontiguousarray(gxt.reshape(L, -1)))
        gv = g2.reshape(L, B, P)

        if not per_step:
            gabar = ga.reshape(B, P).sum(axis=0)
            gbu = np.conj(scale) * gv
            gscale = np.einsum("blp,lbp->p", np.conj(bu), gv, optimize=True)
            dal, dad, dsl, dsd = scheme_partials(
                self.discretization, lam, delta, abar, scale)
            glam = np.conj(dal) * gabar + np.conj(dsl) * gscale
            gdelta = (np.conj(dad) * gabar).real + (np.conj(dsd) * gscale).real
            glog_delta = gdelta * delta
        else:
            ga_k = np.moveaxis(ga.reshape(L, B, P), 0, 1)
            gv_b = np.moveaxis(gv, 0, 1)
            scale_k = np.asarray(scale_k, self.cdt)
            abar_kb = np.asarray(abar_k, self.cdt)
            gbu = np.moveaxis(np.conj(scale_k) * gv_b, 1, 0)
            gscale_k = np.conj(bu) * gv_b
            dal, dad, dsl, dsd = scheme_partials(
                self.discretization, lam, d_eff, abar_kb, scale_k)
            glam = (np.conj(dal) * ga_k + np.conj(dsl) * gscale_k).sum(axis=(0, 1))
            gdeff = (np.conj(dad) * ga_k).real + (np.conj(dsd) * gscale_k).real
            glog_delta = np.einsum("blp,bl->p", gdeff, deltas, optimize=True) * delta

        gB, gu_add = self._mimo_input_pullback(gbu, u)
        gu += gu_add
        grads = {
            "lambda_re_log": -np.exp(self.lambda_re_log) * glam.real,
            "lambda_im": np.ascontiguousarray(glam.imag),
            "B.re": np.ascontiguousarray(gB.real),
            "B.im": np.ascontiguousarray(gB.imag),
            "C.re": np.ascontiguousarray(gC.real),
            "C.im": np.ascontiguousarray(gC.imag),
            "D": gD, "log_delta": glog_delta,
        }
        return grads, gu


class LRU(_MIMOBase):
    """MIMO linear recurrent unit, discrete-native ring parameterization."""

    kind = "lru"
    lti = True
    continuous = False
    OUT_SCALE = 1.0

    def __init__(self, d_model, d_state=None, discretization=None, *,
                 asynchronous=False, dtype="f64", rng=None, seed=0,
                 r_min=0.9, r_max=0.999, max_phase=np.pi / 10):
        super().__init__(d_model, 64 if d_state is None else d_state,
                         discretization, asynchronous, dtype)
        rng = rng if rng is not None else Rng(seed)
        r_mag, r_ph, r_b, r_c = rng.split(4)
        m, n, dt = self.d_model, self.d_state, self.rdt
        mag = np.asarray(r_mag.uniform(r_min, r_max, n), dt)  # |lambda|
        self.nu_log = np.asarray(np.log(-np.log(mag)), dt)
        phase = np.maximum(np.asarray(r_ph.uniform(0.0, max_phase, n), dt), 1e-9)
        self.theta_log = np.asarray(np.log(phase), dt)
        # gamma = sqrt(1 - |lambda|^2) at init, keeping Bu unit-variance.
        self.gamma_log = np.asarray(0.5 * np.log(1.0 - mag.astype(np.float64) ** 2), dt)
        self.B_re, self.B_im = _normal_pair(r_b, (n, m), 1.0 / np.sqrt(m), dt)
        self.C_re, self.C_im = _normal_pair(r_c, (m, n), 1.0 / np.sqrt(n), dt)
        self.D = np.ones(m, dt)

    @property
    def _P(self):
        return self.d_state

    def parameters(self):
        return {
            "nu_log": self.nu_log, "theta_log": self.theta_log,
            "gamma_log": self.gamma_log,
            "B.re": self.B_re, "B.im": self.B_im,
            "C.re": self.C_re, "C.im": self.C_im, "D": self.D,
        }

    def _lambda(self):
        lam = np.empty(self.d_state, self.cdt)
        z = -np.exp(self.nu_log.astype(np.float64)) + 1j * np.exp(self.theta_log.astype(np.float64))
        lam[...] = np.exp(z)
        return lam

    def _abar_scale(self):
        return self._lambda(), np.exp(self.gamma_log), {}

    def _backward(self, saved, gy):
        from .autograd import _scan_pullback

        u, xt, bu = saved["u"], saved["xt"], saved["bu"]
        B, L, m = u.shape
        n = self.d_state
        lam = self._lambda()
        gamma = np.exp(self.gamma_log)
        gy = np.asarray(gy, self.rdt)

        gD, gu, gC, gxt = self._mimo_head_pullback(gy, xt, u)
        g2, ga, _ = _scan_pullback(
            _lanes(lam, B), False, xt.reshape(L, -1), None,
            np.ascontiguousarray(gxt.reshape(L, -1)))
        gv = g2.reshape(L, B, n)
        glam = ga.reshape(B, n).sum(axis=0)

        gbu = gamma * gv
        ggamma = np.einsum("blp,lbp->p", np.conj(bu), gv, optimize=True).real
        gB, gu_add = self._mimo_input_pullback(gbu, u)
        gu += gu_add

        e_nu = np.exp(self.nu_log)
        e_th = np.exp(self.theta_log)
        cl = np.conj(lam) * glam
        grads = {
            "nu_log": -e_nu * cl.real,
            "theta_log": e_th * cl.imag,
            "gamma_log": gamma * ggamma,
            "B.re": np.ascontiguousarray(gB.real),
            "B.im": np.ascontiguousarray(gB.imag),
            "C.re": np.ascontiguousarray(gC.real),
            "C.im": np.ascontiguousarray(gC.imag),
            "D": gD,
        }
        return grads, gu


class S6(LinearRecurrence):
    """Selective SISO recurrence: delta, B, C derived from the current input."""

    kind = "s6"
    lti = False
    continuous = False

    def __init__(self, d_model, d_state=None, discretization=None, *,
                 asynchronous=False, dtype="f64", rng=None, seed=0, d_rank=None):
        super().__init__(d_model, 64 if d_state is None else d_state,
                         discretization, asynchronous, dtype)
        rng = rng if rng is not None else Rng(seed)
        r_b, r_c, r_dn, r_up, r_dt = rng.split(5)
        m, n, dt = self.d_model, self.d_state, self.rdt
        self.d_rank = int(d_rank) if d_rank else max(1, -(-m // 16))
        r = self.d_rank
        self.a_log = np.broadcast_to(
            np.log(np.arange(1, n + 1, dtype=dt)), (m, n)).copy()
        self.W_B = np.asarray(r_b.normal((n, m)) / np.sqrt(m), dt)
        self.W_C = np.asarray(r_c.normal((n, m)) / np.sqrt(m), dt)
        self.W_delta = np.asarray(r_dn.normal((m, r)) / np.sqrt(m), dt)
        self.W_delta_proj = np.asarray(r_up.normal((r, m)) / np.sqrt(r), dt)
        # softplus(b_delta) lands in [1e-3, 1e-1], log-uniform.
        d0 = np.exp(r_dt.uniform(np.log(1e-3), np.log(1e-1), m))
        self.b_delta = np.asarray(np.log(np.expm1(d0)), dt)
        self.D = np.ones(m, dt)

    def parameters(self):
        return {
            "a_log": self.a_log, "W_B": self.W_B, "W_C": self.W_C,
            "W_delta": self.W_delta, "W_delta_proj": self.W_delta_proj,
            "b_delta": self.b_delta, "D": self.D,
        }

    def _scan_dtype(self):
        return self.rdt

    def _projections(self, ub):
        """(delta, bk, ck, p1, pre) for an input block [.., m]."""
        p1 = ub @ self.W_delta
        pre = p1 @ self.W_delta_proj + self.b_delta
        delta = softplus(pre)
        bk = ub @ self.W_B.T
        ck = ub @ self.W_C.T
        return delta, bk, ck, p1, pre

    def _lane_count(self, B):
        return B * self.d_model * self.d_state

    def _stream_setup(self, u, deltas):
        return {"a": -np.exp(self.a_log)}

    def _a_lanes(self, ctx, B):
        return None

    def _stream_build(self, ctx, u, deltas, k0, k1):
        ub = u[:, k0:k1]
        delta, bk, ck, _, _ = self._projections(ub)
        abar = np.exp(delta[..., None] * ctx["a"])  # [B,blk,m,n]
        w = (delta * ub)[..., None] * bk[:, :, None, :]
        return _to_time_major(abar), _to_time_major(w), ck

    def _stream_project(self, ctx, u, y, k0, k1, states, ck):
        B = u.shape[0]
        xs = states.reshape(k1 - k0, B, self.d_model, self.d_state)
        yk = np.einsum("lbhn,bln->blh", xs, ck, optimize=True)
        y[:, k0:k1] = yk + self.D * u[:, k0:k1]

    def _forward_tape(self, u, mode, workers, deltas):
        B, L, m = u.shape
        n = self.d_state
        a = -np.exp(self.a_log)
        delta, bk, ck, p1, pre = self._projections(u)
        abar = np.exp(delta[..., None] * a)
        w = (delta * u)[..., None] * bk[:, :, None, :]
        a_arg = _to_time_major(abar)
        bt = _to_time_major(w)
        run = _scan.scan_parallel if mode == "parallel" else _scan.scan_sequential
        xt = (run(a_arg, bt, workers=workers) if mode == "parallel" else run(a_arg, bt))
        xt = xt.reshape(L, B, m, n)
        y = np.einsum("lbhn,bln->blh", xt, ck, optimize=True) + self.D * u
        y = np.ascontiguousarray(y, self.rdt)
        tp = Tape(self.kind, u=u, xt=xt, delta=delta, bk=bk, ck=ck, p1=p1, pre=pre)
        return y, tp, xt[-1].reshape(-1)

    def _backward(self, saved, gy):
        from .autograd import _scan_pullback

        u, xt = saved["u"], saved["xt"]
        delta, bk, ck, p1, pre = (saved[k] for k in ("delta", "bk", "ck", "p1", "pre"))
        B, L, m = u.shape
        n = self.d_state
        a = -np.exp(self.a_log)
        gy = np.asarray(gy, self.rdt)

        gD = np.einsum("blh,blh->h", gy, u, optimize=True)
        gu = gy * self.D
        gck = np.einsum("blh,lbhn->bln", gy, xt, optimize=True)
        gxt = np.moveaxis(gy, 1, 0)[..., None] * np.moveaxis(ck, 1, 0)[:, :, None, :]

        abar = np.exp(delta[..., None] * a)
        a_arg = _to_time_major(abar)
        g2, ga, _ = _scan_pullback(
            a_arg, True, xt.reshape(L, -1), None,
            np.ascontiguousarray(gxt.reshape(L, -1)))
        gw = np.moveaxis(g2.reshape(L, B, m, n), 0, 1)  # [B,L,m,n]
        gabar = np.moveaxis(ga.reshape(L, B, m, n), 0, 1)

        t = abar * gabar
        gdelta = np.einsum("blhn,hn->blh", t, a, optimize=True)
        ga_mat = np.einsum("blhn,blh->hn", t, delta, optimize=True)

        s1 = np.einsum("blhn,bln->blh", gw, bk, optimize=True)
        gdelta += s1 * u
        gu += delta * s1
        gbk = np.einsum("blhn,blh->bln", gw, delta * u, optimize=True)

        gpre = sigmoid(pre) * gdelta
        gb_delta = gpre.sum(axis=(0, 1))
        g_proj = np.einsum("blr,blh->rh", p1, gpre, optimize=True)
        gp1 = gpre @ self.W_delta_proj.T
        g_wdelta = np.einsum("blh,blr->hr", u, gp1, optimize=True)
        gu += gp1 @ self.W_delta.T

        gWB = np.einsum("bln,blh->nh", gbk, u, optimize=True)
        gu += gbk @ self.W_B
        gWC = np.einsum("bln,blh->nh", gck, u, optimize=True)
        gu += gck @ self.W_C

        grads = {
            "a_log": a * ga_mat,
            "W_B": gWB, "W_C": gWC,
            "W_delta": g_wdelta, "W_delta_proj": g_proj,
            "b_delta": gb_delta, "D": gD,
        }
        return grads, gu

    def init_state(self, batch: int = 1) -> LayerStepState:
        st = LayerStepState(self.kind, batch)
        m, n, r, dt = self.d_model, self.d_state, self.d_rank, self.rdt
        for name in ("x", "abar", "v", "t3"):
            setattr(st, name, alloc((batch, m, n), dt))
        st.x[...] = 0
        st.a = alloc((m, n), dt)
        st.a[...] = -np.exp(self.a_log)
        st.p1 = alloc((batch, r), dt)
        st.pre = alloc((batch, m), dt)
        st.dl = alloc((batch, m), dt)
        st.sp = alloc((batch, m), dt)
        st.bk = alloc((batch, n), dt)
        st.ck = alloc((batch, n), dt)
        st.WBT = alloc((m, n), dt)
        st.WBT[...] = self.W_B.T
        st.WCT = alloc((m, n), dt)
        st.WCT[...] = self.W_C.T
        st.y = alloc((batch, m), dt)
        st.t2 = alloc((batch, m), dt)
        return st

    def _load_state(self, st, xf, B):
        st.x[...] = xf.reshape(B, self.d_model, self.d_state)

    def _step(self, st, uk, delta_k):
        np.matmul(uk, self.W_delta, out=st.p1)
        np.matmul(st.p1, self.W_delta_proj, out=st.pre)
        np.add(st.pre, self.b_delta, out=st.pre)
        # softplus(pre) = max(pre, 0) + log1p(exp(-|pre|)), overflow-free
        np.abs(st.pre, out=st.sp)
        np.negative(st.sp, out=st.sp)
        np.exp(st.sp, out=st.sp)
        np.log1p(st.sp, out=st.sp)
        np.maximum(st.pre, 0, out=st.dl)
        np.add(st.dl, st.sp, out=st.dl)
        np.matmul(uk, st.WBT, out=st.bk)
        np.matmul(uk, st.WCT, out=st.ck)
        np.multiply(st.a, st.dl[:, :, None], out=st.abar)
        np.exp(st.abar, out=st.abar)
        np.multiply(uk, st.dl, out=st.t2)
        np.multiply(st.t2[:, :, None], st.bk[:, None, :], out=st.v)
        np.multiply(st.x, st.abar, out=st.x)
        np.add(st.x, st.v, out=st.x)
        np.multiply(st.x, st.ck[:, None, :], out=st.t3)
        np.sum(st.t3, axis=2, out=st.y)
        np.multiply(uk, self.D, out=st.t2)
        np.add(st.y, st.t2, out=st.y)
        return st.y


class RGLRU(LinearRecurrence):
    """Gated real recurrence of width d_model: a_k = a^(c*r_k), y = x."""

    kind = "rglru"
    lti = False
    continuous = False
    GATE_POWER = 8.0  # the fixed exponent c

    def __init__(self, d_model, d_state=None, discretization=None, *,
                 asynchronous=False, dtype="f64", rng=None, seed=0,
                 a_min=0.9, a_max=0.999):
        if d_state is not None and d_state != d_model:
            warnings.warn(
                f"rglru's recurrence width is structurally d_model={d_model}; "
                f"d_state={d_state} is ignored"
            )
        super().__init__(d_model, d_model, discretization, asynchronous, dtype)
        rng = rng if rng is not None else Rng(seed)
        r_a, r_r, r_i = rng.split(3)
        m, dt = self.d_model, self.rdt
        a0 = np.asarray(r_a.uniform(a_min, a_max, m), np.float64)
        self.lambda_param = np.asarray(np.log(a0) - np.log1p(-a0), dt)  # logit
        self.W_r = np.asarray(r_r.normal((m, m)) / np.sqrt(m), dt)
        self.b_r = np.zeros(m, dt)
        self.W_i = np.asarray(r_i.normal((m, m)) / np.sqrt(m), dt)
        self.b_i = np.zeros(m, dt)

    def parameters(self):
        return {
            "lambda_param": self.lambda_param,
            "W_r": self.W_r, "b_r": self.b_r,
            "W_i": self.W_i, "b_i": self.b_i,
        }

    def _scan_dtype(self):
        return self.rdt

    def _log_a(self):
        # log sigmoid(lambda_param), computed without overflow
        return -softplus(-self.lambda_param)

    def _gates(self, ub):
        r = sigmoid(ub @ self.W_r.T + self.b_r)
        ig = sigmoid(ub @ self.W_i.T + self.b_i)
        loga = self.GATE_POWER * r * self._log_a()
        ak = np.exp(loga)
        s = np.sqrt(-np.expm1(2.0 * loga))  # sqrt(1 - a_k^2), cancellation-free
        return r, ig, ak, s

    def _lane_count(self, B):
        return B * self.d_model

    def _stream_setup(self, u, deltas):
        return {}

    def _a_lanes(self, ctx, B):
        return None

    def _stream_build(self, ctx, u, deltas, k0, k1):
        ub = u[:, k0:k1]
        _, ig, ak, s = self._gates(ub)
        w = s * ig * ub
        return _to_time_major(ak), _to_time_major(w), None

    def _stream_project(self, ctx, u, y, k0, k1, states, bctx):
        B = u.shape[0]
        y[:, k0:k1] = np.moveaxis(states.reshape(k1 - k0, B, self.d_model), 0, 1)

    def _forward_tape(self, u, mode, workers, deltas):
        B, L, m = u.shape
        r, ig, ak, s = self._gates(u)
        w = s * ig * u
        a_arg = _to_time_major(ak)
        bt = _to_time_major(w)
        run = _scan.scan_parallel if mode == "parallel" else _scan.scan_sequential
        xt = (run(a_arg, bt, workers=workers) if mode == "parallel" else run(a_arg, bt))
        xt = xt.reshape(L, B, m)
        y = np.ascontiguousarray(np.moveaxis(xt, 0, 1), self.rdt)
        tp = Tape(self.kind, u=u, xt=xt, r=r, ig=ig, ak=ak, s=s)
        return y, tp, xt[-1].reshape(-1)

    def _backward(self, saved, gy):
        from .autograd import _scan_pullback

        u, xt = saved["u"], saved["xt"]
        r, ig, ak, s = (saved[k] for k in ("r", "ig", "ak", "s"))
        B, L, m = u.shape
        c = self.GATE_POWER
        la = self._log_a()
        gy = np.asarray(gy, self.rdt)

        gxt = np.ascontiguousarray(np.moveaxis(gy, 1, 0).reshape(L, -1))
        g2, ga, _ = _scan_pullback(_to_time_major(ak), True, xt.reshape(L, -1), None, gxt)
        g = np.moveaxis(g2.reshape(L, B, m), 0, 1)
        gak = np.moveaxis(ga.reshape(L, B, m), 0, 1)

        gs = ig * u * g
        gloga = ak * gak - (ak * ak / s) * gs
        gla = (c * r * gloga).sum(axis=(0, 1))
        g_lambda = sigmoid(-self.lambda_param) * gla

        gr = c * la * gloga
        gqr = r * (1.0 - r) * gr
        gW_r = np.einsum("blj,blh->jh", gqr, u, optimize=True)
        gb_r = gqr.sum(axis=(0, 1))
        gu = gqr @ self.W_r

        gig = s * u * g
        gqi = ig * (1.0 - ig) * gig
        gW_i = np.einsum("blj,blh->jh", gqi, u, optimize=True)
        gb_i = gqi.sum(axis=(0, 1))
        gu += gqi @ self.W_i

        gu += s * ig * g

        grads = {
            "lambda_param": g_lambda,
            "W_r": gW_r, "b_r": gb_r,
            "W_i": gW_i, "b_i": gb_i,
        }
        return grads, gu

    def init_state(self, batch: int = 1) -> LayerStepState:
        st = LayerStepState(self.kind, batch)
        m, dt = self.d_model, self.rdt
        for name in ("x", "qr", "qi", "ta", "ts", "tw", "y"):
            setattr(st, name, alloc((batch, m), dt))
        st.x[...] = 0
        st.la = alloc(m, dt)
        st.la[...] = self._log_a()
        st.WrT = alloc((m, m), dt)
        st.WrT[...] = self.W_r.T
        st.WiT = alloc((m, m), dt)
        st.WiT[...] = self.W_i.T
        return st

    def _load_state(self, st, xf, B):
        st.x[...] = xf.reshape(B, self.d_model)

    def _step(self, st, uk, delta_k):
        with np.errstate(over="ignore"):
            np.matmul(uk, st.WrT, out=st.qr)
            np.add(st.qr, self.b_r, out=st.qr)
            np.negative(st.qr, out=st.qr)
            np.exp(st.qr, out=st.qr)
            np.add(st.qr, 1.0, out=st.qr)
            np.reciprocal(st.qr, out=st.qr)  # r
            np.matmul(uk, st.WiT, out=st.qi)
            np.add(st.qi, self.b_i, out=st.qi)
            np.negative(st.qi, out=st.qi)
            np.exp(st.qi, out=st.qi)
            np.add(st.qi, 1.0, out=st.qi)
            np.reciprocal(st.qi, out=st.qi)  # input gate
        np.multiply(st.qr, st.la, out=st.ta)
        np.multiply(st.ta, self.GATE_POWER, out=st.ta)  # log a_k
        np.multiply(st.ta, 2.0, out=st.ts)
        np.expm1(st.ts, out=st.ts)
        np.negative(st.ts, out=st.ts)
        np.sqrt(st.ts, out=st.ts)  # sqrt(1 - a_k^2)
        np.exp(st.ta, out=st.ta)  # a_k
        np.multiply(st.x, st.ta, out=st.x)
        np.multiply(st.ts, st.qi, out=st.tw)
        np.multiply(st.tw, uk, out=st.tw)
        np.add(st.x, st.tw, out=st.x)
        np.copyto(st.y, st.x)
        return st.y


# ---------------------------------------------------------------------------
# Registry


_REGISTRY = {"s4d": S4D, "s5": S5, "lru": LRU, "s6": S6, "rglru": RGLRU}


def make_layer(kind, d_model, d_state=None, discretization=None, *,
               asynchronous=False, dtype="f64", rng=None, seed=0, **extras):
    """Construct a layer by registry kind; see the class docstrings."""
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise UnknownLayer(
            f"unknown layer kind {kind!r}; registered kinds: {sorted(_REGISTRY)}"
        ) from None
    return cls(d_model, d_state=d_state, discretization=discretization,
               asynchronous=asynchronous, dtype=dtype, rng=rng, seed=seed, **extras)


def init_layer(kind, cfg: LayerConfig, rng: Rng):
    """Build a layer of `kind` from a LayerConfig and a caller-owned Rng."""
    return make_layer(kind, cfg.d_model, d_state=cfg.d_state,
                      discretization=cfg.discretization,
                      asynchronous=cfg.asynchronous, dtype=cfg.dtype,
                      rng=rng, **cfg.extras)


def lti_forward(layer, u, mode="sequential", *, workers=1, deltas=None, **kw):
    """Batched forward for time-invariant layers (s4d, s5, lru)."""
    if not layer.lti:
        raise ValueError(f"{layer.kind} is time-varying; use ltv_forward")
    return layer.forward(u, mode, workers=workers, deltas=deltas, **kw)


def ltv_forward(layer, u, mode="sequential", *, workers=1, **kw):
    """Batched forward for time-varying layers (s6, rglru)."""
    if layer.lti:
        raise ValueError(f"{layer.kind} is time-invariant; use lti_forward")
    return layer.forward(u, mode, workers=workers, **kw)


def layer_step(layer, state, u_k, delta_k=None):
    """Single-step advance; identical math to one position of the forward."""
    return layer.step(state, u_k, delta_k)
