"""
A tour of the five linear-recurrence layers
===========================================

Every layer in this package computes the same shaped map: an input batch
[batch, length, d_model] goes in, the same shape comes out, and inside there
is a diagonal linear state recurrence

    x_k = a_k * x_{k-1} + b_k * u_k,     y_k = head(x_k) + feedthrough

What differs between the five kinds is how a_k and b_k are parameterized:
continuous-time poles that get discretized (s4d, s5), a learned discrete
ring of eigenvalues (lru), input-selected coefficients (s6), or a gated
leak (rglru).  This script builds one of each and runs the same signal
through all of them in the three execution modes.
"""

import numpy as np

from linrec import LAYER_KINDS, make_layer
from linrec.numerics import Rng

# one shared test signal: 2 sequences of 300 steps, 8 channels
rng = Rng(0)
u = rng.normal((2, 300, 8))

print(f"{'kind':8s} {'params':>7s} {'|y|_rms':>9s} {'par vs seq':>11s} "
      f"{'step vs seq':>12s}")
print("-" * 52)

for kind in LAYER_KINDS:
    # rglru's state width is structurally the model width, so we only pass
    # d_state for the kinds that have an independent state dimension
    d_state = None if kind == "rglru" else 16
    layer = make_layer(kind, 8, d_state=d_state, seed=42)

    # mode 1: plain left-to-right recurrence
    y_seq = layer.forward(u)

    # mode 2: chunked parallel scan (same numbers, different schedule)
    y_par = layer.forward(u, "parallel", workers=4)

    # mode 3: one token at a time through an explicit state object,
    # the way autoregressive decoding consumes the layer
    state = layer.init_state(batch=2)
    y_step = np.empty_like(y_seq)
    for k in range(300):
        y_step[:, k], state = layer.step(state, u[:, k])

    n_params = sum(p.size for p in layer.parameters().values())
    rms = float(np.sqrt((y_seq ** 2).mean()))
    err_par = float(np.max(np.abs(y_par - y_seq)))
    err_step = float(np.max(np.abs(y_step - y_seq)))
    print(f"{kind:8s} {n_params:7d} {rms:9.4f} {err_par:11.2e} {err_step:12.2e}")

# The parallel and step columns are at machine precision: the three modes
# are the same function, not three approximations of it.

# Time-invariant kinds (s4d, s5, lru) are linear systems, so superposition
# holds: y(u1 + u2) == y(u1) + y(u2).  The input-selective kinds compute
# their coefficients from the input, so superposition fails — that
# nonlinearity in the coefficients is exactly what they buy.
u1, u2 = rng.normal((1, 100, 8)), rng.normal((1, 100, 8))
print()
for kind in LAYER_KINDS:
    layer = make_layer(kind, 8, d_state=None if kind == "rglru" else 16,
                       seed=42)
    gap = float(np.max(np.abs(layer.forward(u1 + u2)
                              - layer.forward(u1) - layer.forward(u2))))
    tag = "linear" if gap < 1e-12 else "input-selective"
    print(f"{kind:8s} superposition gap = {gap:9.2e}   ({tag})")
