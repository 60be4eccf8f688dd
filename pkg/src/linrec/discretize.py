"""Continuous-to-discrete maps for diagonal linear recurrences.

Each scheme turns continuous-time dynamics dx/dt = a x + b u (diagonal a,
complex or real) and a step size delta into per-step coefficients
(a_bar, b_bar) for x_k = a_bar x_{k-1} + b_bar u_k. All schemes map the left
half-plane Re(a) <= 0 into the closed unit disk |a_bar| <= 1.

Schemes:
  zoh       a_bar = e^{delta a},            b_bar = ((a_bar - 1)/a) b
  bilinear  a_bar = (1 + da/2)/(1 - da/2),  b_bar = (delta/(1 - da/2)) b
  dirac     a_bar = e^{delta a},            b_bar = b   (unit-impulse inputs)

zoh switches to the series limit b_bar = delta*b for |a| below a per-dtype
threshold, where the direct quotient loses precision to cancellation.
"""
from __future__ import annotations

import numpy as np

from .numerics import real_dtype

__all__ = [
    "ZOH_SMALL_POLE_EPS",
    "BILINEAR_SINGULAR_TOL",
    "SingularBilinear",
    "NonMonotoneTimestamps",
    "zoh_factors",
    "bilinear_factors",
    "dirac_factors",
    "discretize_zoh",
    "discretize_bilinear",
    "discretize_dirac",
    "discretize",
    "SCHEMES",
    "deltas_from_timestamps",
]

# Below this |a|, (e^{delta a} - 1)/a is evaluated as its delta->0 limit.
ZOH_SMALL_POLE_EPS = {
    np.dtype(np.float64): 1e-8,
    np.dtype(np.float32): 1e-4,
}

BILINEAR_SINGULAR_TOL = 1e-6


class SingularBilinear(ValueError):
    """Bilinear denominator 1 - delta*a/2 is numerically zero (pole at 2/delta)."""


class NonMonotoneTimestamps(ValueError):
    """Timestamps passed to deltas_from_timestamps decrease somewhere."""


def _small_pole_eps(a: np.ndarray) -> float:
    return ZOH_SMALL_POLE_EPS[real_dtype(np.asarray(a).dtype)]


def zoh_factors(a, delta):
    """Zero-order-hold coefficients (a_bar, input_scale); b_bar = input_scale * b."""
    a = np.asarray(a)
    delta = np.asarray(delta)
    da = delta * a
    a_bar = np.exp(da)
    small = np.abs(a) < _small_pole_eps(a)
    a_safe = np.where(small, np.ones_like(a), a)
    scale = np.where(small, delta * np.ones_like(a_bar), (a_bar - 1.0) / a_safe)
    return a_bar, scale


def bilinear_factors(a, delta):
    """Tustin / trapezoidal coefficients (a_bar, input_scale); b_bar = input_scale * b.

    Raises SingularBilinear where |1 - delta*a/2| <= 1e-6 * (1 + |delta*a/2|).
    """
    a = np.asarray(a)
    delta = np.asarray(delta)
    half = 0.5 * delta * a
    denom = 1.0 - half
    if np.any(np.abs(denom) <= BILINEAR_SINGULAR_TOL * (1.0 + np.abs(half))):
        raise SingularBilinear(
            "bilinear transform singular: delta*a/2 too close to 1 "
            f"(min |1 - delta*a/2| = {np.min(np.abs(denom)):.3e})"
        )
    return (1.0 + half) / denom, delta / denom


def dirac_factors(a, delta):
    """Impulse-train coefficients (a_bar, input_scale=1); the input enters unscaled."""
    a = np.asarray(a)
    delta = np.asarray(delta)
    a_bar = np.exp(delta * a)
    return a_bar, np.ones_like(a_bar)


def _apply_input_scale(scale, b):
    """b_bar from a per-state scale.

    b with ndim >= 2 is treated as an input matrix [..., d_state, d_input]
    (scaled along its state axis); vectors and scalars scale elementwise.
    """
    b = np.asarray(b)
    if b.ndim >= 2:
        return np.asarray(scale)[..., None] * b
    return np.asarray(scale) * b


def discretize_zoh(a, b, delta):
    a_bar, scale = zoh_factors(a, delta)
    return a_bar, _apply_input_scale(scale, b)


def discretize_bilinear(a, b, delta):
    a_bar, scale = bilinear_factors(a, delta)
    return a_bar, _apply_input_scale(scale, b)


def discretize_dirac(a, b, delta):
    a_bar, _ = dirac_factors(a, delta)
    return a_bar, np.asarray(b)


SCHEMES = {
    "zoh": discretize_zoh,
    "bilinear": discretize_bilinear,
    "dirac": discretize_dirac,
}

_FACTOR_FNS = {
    "zoh": zoh_factors,
    "bilinear": bilinear_factors,
    "dirac": dirac_factors,
}


def scheme_factors(scheme: str, a, delta):
    """(a_bar, input_scale) for a named scheme; see the scheme functions."""
    try:
        fn = _FACTOR_FNS[scheme]
    except KeyError:
        raise ValueError(f"unknown discretization scheme {scheme!r}; expected one of {sorted(SCHEMES)}") from None
    return fn(a, delta)


def discretize(scheme: str, a, b, delta):
    """Dispatch to a named scheme: returns (a_bar, b_bar)."""
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown discretization scheme {scheme!r}; expected one of {sorted(SCHEMES)}") from None
    return fn(a, b, delta)


def deltas_from_timestamps(timestamps, delta_0):
    """Per-step intervals from absolute event times.

    delta[0] = delta_0 (the caller-supplied lead-in interval) and
    delta[k] = t_k - t_{k-1}. Timestamps must be non-decreasing along the
    last axis; zero intervals are legal (simultaneous events).
    """
    t = np.asarray(timestamps)
    if t.shape[-1] == 0:
        raise ValueError("need at least one timestamp")
    if delta_0 < 0:
        raise ValueError(f"delta_0 must be non-negative, got {delta_0}")
    diffs = np.diff(t, axis=-1)
    if np.any(diffs < 0):
        raise NonMonotoneTimestamps("timestamps must be non-decreasing")
    lead = np.full(t.shape[:-1] + (1,), delta_0, dtype=diffs.dtype if diffs.size else t.dtype)
    return np.concatenate([lead, diffs], axis=-1)
