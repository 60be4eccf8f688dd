"""Shared numeric substrate: dtype policy, stable activations, complex helpers,
a splittable counter-based RNG, and the instrumented allocator used by the
single-step inference paths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "REAL_DTYPES",
    "SOFTPLUS_THRESHOLD",
    "ShapeError",
    "real_dtype",
    "complex_dtype",
    "as_tensor",
    "softplus",
    "sigmoid",
    "complex_exp",
    "ComplexPair",
    "alloc",
    "allocation_count",
    "Rng",
]

REAL_DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

_COMPLEX_FOR = {
    np.dtype(np.float32): np.dtype(np.complex64),
    np.dtype(np.float64): np.dtype(np.complex128),
}
_REAL_FOR = {c: r for r, c in _COMPLEX_FOR.items()}

# log1p(exp(x)) == x to machine precision beyond these points; also avoids
# overflow in exp for large arguments.
SOFTPLUS_THRESHOLD = {
    np.dtype(np.float32): 30.0,
    np.dtype(np.float64): 50.0,
}


class ShapeError(ValueError):
    """Raised when an array's shape violates an operation's contract."""


def real_dtype(spec) -> np.dtype:
    """Resolve "f32"/"f64", a numpy dtype, or a complex dtype to the matching
    real dtype."""
    if isinstance(spec, str):
        try:
            return REAL_DTYPES[spec]
        except KeyError:
            raise ValueError(f"unknown dtype spec {spec!r}; expected 'f32' or 'f64'") from None
    dt = np.dtype(spec)
    if dt in _REAL_FOR:
        return _REAL_FOR[dt]
    if dt in _COMPLEX_FOR:
        return dt
    raise ValueError(f"unsupported dtype {dt}; expected float32/float64 or complex64/complex128")


def complex_dtype(spec) -> np.dtype:
    """Complex dtype paired with a real dtype spec (f32 -> complex64, f64 -> complex128)."""
    return _COMPLEX_FOR[real_dtype(spec)]


def as_tensor(values, dtype=None) -> np.ndarray:
    """Materialize `values` as a C-contiguous array in one of the supported
    dtypes (float32/64, complex64/128). Integer/bool input defaults to float64."""
    arr = np.asarray(values)
    if dtype is not None:
        dt = np.dtype(dtype) if not isinstance(dtype, str) else (
            REAL_DTYPES[dtype] if dtype in REAL_DTYPES else np.dtype(dtype)
        )
    elif arr.dtype in _COMPLEX_FOR or arr.dtype in _REAL_FOR:
        dt = arr.dtype
    elif np.issubdtype(arr.dtype, np.complexfloating):
        dt = np.dtype(np.complex128)
    else:
        dt = np.dtype(np.float64)
    if dt not in _COMPLEX_FOR and dt not in _REAL_FOR:
        raise ValueError(f"unsupported tensor dtype {dt}")
    return np.ascontiguousarray(arr, dtype=dt)


def softplus(x):
    """ln(1 + e^x), returning x directly above the per-dtype overflow threshold."""
    x = np.asarray(x)
    if x.dtype not in SOFTPLUS_THRESHOLD:
        x = x.astype(np.float64)
    t = SOFTPLUS_THRESHOLD[x.dtype]
    out = np.log1p(np.exp(np.minimum(x, t)))
    out = np.where(x > t, x, out)
    return out[()] if out.ndim == 0 else out


def sigmoid(x):
    """1 / (1 + e^-x), evaluated without overflow for large |x|."""
    x = np.asarray(x)
    if x.dtype not in SOFTPLUS_THRESHOLD:
        x = x.astype(np.float64)
    pos = x >= 0
    e = np.exp(np.where(pos, -x, x))  # exponent is never positive
    out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def complex_exp(re, im=None):
    """exp of a complex argument.

    With two arguments, (re, im) are the real/imaginary planes and a
    (re, im) pair of planes is returned: e^re * (cos im, sin im).
    With one complex argument, returns the complex exponential directly.
    """
    if im is None:
        z = np.asarray(re)
        mag = np.exp(z.real)
        out = np.empty(z.shape, _COMPLEX_FOR.get(np.asarray(mag).dtype, np.dtype(np.complex128)))
        out.real = mag * np.cos(z.imag)
        out.imag = mag * np.sin(z.imag)
        return out[()] if out.ndim == 0 else out
    re = np.asarray(re)
    im = np.asarray(im)
    if re.shape != im.shape:
        raise ShapeError(f"plane shapes differ: {re.shape} vs {im.shape}")
    mag = np.exp(re)
    return mag * np.cos(im), mag * np.sin(im)


@dataclass(frozen=True)
class ComplexPair:
    """A complex array stored as separate real/imaginary planes of equal shape."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"plane shapes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        z = np.empty(self.re.shape, _COMPLEX_FOR[np.dtype(self.re.dtype)])
        z.real = self.re
        z.imag = self.im
        return z

    @classmethod
    def from_complex(cls, z) -> "ComplexPair":
        z = np.asarray(z)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))


# ---------------------------------------------------------------------------
# Instrumented allocation. Step-mode inference must allocate all of its
# scratch through alloc() up front; the counter lets tests and the benchmark
# assert that the per-step hot loop performs zero library allocations.

_allocations = 0


def alloc(shape, dtype) -> np.ndarray:
    """Allocate an uninitialized buffer, bumping the global allocation counter."""
    global _allocations
    _allocations += 1
    return np.empty(shape, dtype)


def allocation_count() -> int:
    """Number of alloc() calls since import (monotonic; compare deltas)."""
    return _allocations


# ---------------------------------------------------------------------------


class Rng:
    """Deterministic splittable RNG over a counter-based generator (Philox).

    split(n) derives n independent child streams; the same seed and the same
    sequence of draw/split calls reproduce identical values on any host or
    thread count.
    """

    def __init__(self, seed: int = 0, *, _seq: np.random.SeedSequence | None = None):
        self._seq = np.random.SeedSequence(seed) if _seq is None else _seq
        self._gen = np.random.Generator(np.random.Philox(self._seq))
        self.seed = seed if _seq is None else None

    def normal(self, shape=(), dtype="f64") -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=real_dtype(dtype))

    def uniform(self, low=0.0, high=1.0, shape=(), dtype="f64") -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        return np.asarray(out, dtype=real_dtype(dtype))[()] if np.ndim(out) == 0 else out.astype(real_dtype(dtype), copy=False)

    def integers(self, low, high=None, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def split(self, n: int) -> list["Rng"]:
        return [Rng(_seq=s) for s in self._seq.spawn(n)]
