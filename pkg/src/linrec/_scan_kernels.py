"""Numba inner loops for diagonal linear recurrences.

All kernels are time-major over [length, lanes] arrays and dtype-generic
(float32/64, complex64/128 specializations are compiled on first use and
cached on disk). None of them take the GIL, so chunk-level thread pools get
real parallelism. Kernels never conjugate: backward callers pass
pre-conjugated coefficients. Length must be >= 1 (wrappers enforce this).
"""
from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def scan_const(a, b, x0, out):
    """out[k] = a * out[k-1] + b[k], seeded with x0; a is per-lane constant."""
    L, N = b.shape
    for j in range(N):
        x = x0[j]
        aj = a[j]
        for k in range(L):
            x = aj * x + b[k, j]
            out[k, j] = x


@njit(**_JIT)
def scan_var(a, b, x0, out):
    """out[k] = a[k] * out[k-1] + b[k], seeded with x0; a varies per step."""
    L, N = b.shape
    for j in range(N):
        x = x0[j]
        for k in range(L):
            x = a[k, j] * x + b[k, j]
            out[k, j] = x


@njit(**_JIT)
def compose_const(a, b, acc_a, acc_b):
    """Fold a block into a running composed element, in place.

    (acc_a, acc_b) <- block o (acc_a, acc_b): acc_b = a*acc_b + b[k] stepwise,
    acc_a multiplied by a once per step. Callers initialize the accumulators
    (identity: acc_a = 1, acc_b = 0).
    """
    L, N = b.shape
    for j in range(N):
        aj = a[j]
        xa = acc_a[j]
        xb = acc_b[j]
        for k in range(L):
            xb = aj * xb + b[k, j]
            xa = aj * xa
        acc_a[j] = xa
        acc_b[j] = xb


@njit(**_JIT)
def compose_var(a, b, acc_a, acc_b):
    L, N = b.shape
    for j in range(N):
        xa = acc_a[j]
        xb = acc_b[j]
        for k in range(L):
            ak = a[k, j]
            xb = ak * xb + b[k, j]
            xa = ak * xa
        acc_a[j] = xa
        acc_b[j] = xb


@njit(**_JIT)
def local_scan_const(a, b, out, prod):
    """Zero-initialized chunk scan plus the chunk's total a-product."""
    L, N = b.shape
    for j in range(N):
        aj = a[j]
        x = b[0, j]  # a*0 + b[0]
        out[0, j] = x
        p = aj
        for k in range(1, L):
            x = aj * x + b[k, j]
            out[k, j] = x
            p = p * aj
        prod[j] = p


@njit(**_JIT)
def local_scan_var(a, b, out, prod):
    L, N = b.shape
    for j in range(N):
        x = b[0, j]
        out[0, j] = x
        p = a[0, j]
        for k in range(1, L):
            ak = a[k, j]
            x = ak * x + b[k, j]
            out[k, j] = x
            p = p * ak
        prod[j] = p


@njit(**_JIT)
def fixup_const(a, xin, out):
    """out[k] += a^{k+1} * xin: inject the state entering the chunk."""
    L, N = out.shape
    for j in range(N):
        aj = a[j]
        v = xin[j]
        p = aj
        out[0, j] = out[0, j] + p * v
        for k in range(1, L):
            p = p * aj
            out[k, j] = out[k, j] + p * v


@njit(**_JIT)
def fixup_var(a, xin, out):
    L, N = out.shape
    for j in range(N):
        v = xin[j]
        p = a[0, j]
        out[0, j] = out[0, j] + p * v
        for k in range(1, L):
            p = p * a[k, j]
            out[k, j] = out[k, j] + p * v


@njit(**_JIT)
def backward_const(aconj, gx, out):
    """Reverse accumulation out[k] = gx[k] + aconj * out[k+1] (aconj constant)."""
    L, N = gx.shape
    for j in range(N):
        aj = aconj[j]
        g = gx[L - 1, j]
        out[L - 1, j] = g
        for k in range(L - 2, -1, -1):
            g = gx[k, j] + aj * g
            out[k, j] = g


@njit(**_JIT)
def backward_var(aconj, gx, out):
    """Reverse accumulation out[k] = gx[k] + aconj[k+1] * out[k+1]."""
    L, N = gx.shape
    for j in range(N):
        g = gx[L - 1, j]
        out[L - 1, j] = g
        for k in range(L - 2, -1, -1):
            g = gx[k, j] + aconj[k + 1, j] * g
            out[k, j] = g


def warm_up(precision="f64"):
    """Compile every kernel for the real+complex dtypes of one precision.

    First compilation costs ~1 s per dtype; numba's disk cache makes later
    processes fast. Benchmarks call this before timing.
    """
    rdt = np.float32 if precision in ("f32", np.float32, np.dtype(np.float32)) else np.float64
    cdt = np.complex64 if rdt is np.float32 else np.complex128
    for dt in (rdt, cdt):
        a1 = np.ones(1, dt)
        aL = np.ones((2, 1), dt)
        b = np.ones((2, 1), dt)
        x0 = np.zeros(1, dt)
        out = np.empty((2, 1), dt)
        scan_const(a1, b, x0, out)
        scan_var(aL, b, x0, out)
        compose_const(a1, b, np.ones(1, dt), np.zeros(1, dt))
        compose_var(aL, b, np.ones(1, dt), np.zeros(1, dt))
        local_scan_const(a1, b, out, np.empty(1, dt))
        local_scan_var(aL, b, out, np.empty(1, dt))
        fixup_const(a1, x0, out)
        fixup_var(aL, x0, out)
        backward_const(a1, b, out)
        backward_var(aL, b, out)
