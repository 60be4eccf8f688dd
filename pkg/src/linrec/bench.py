"""Measurement and validation harness, CSV out.

run_bench times layers on random tensors over a batch x seqlen x d_model
cross product: the train phase times a taped forward plus analytic backward,
the infer phase times a seq_len single-step loop on preallocated state. Each
point runs `repeats` experiments of `warmup` untimed then `iters` timed
passes on a monotonic clock; the reported std is across the repeat means,
not raw iterations.

run_validation executes the mode-equivalence sweep (sequential vs chunked
parallel vs step-fold, both dtypes) and the gradient-consistency sweep
(analytic vs finite differences, several seeds) for every layer kind and
legal discretization, printing one matrix cell per combination.

scaling_report times sequential vs parallel forwards on identical inputs per
(length, threads) cell, with a speedup column and a flag for lengths that
fall back to the single-chunk sequential path.
"""
from __future__ import annotations

import csv
import itertools
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autograd import check_layer_gradients, layer_backward
from .layers import LAYER_KINDS, SCHEMES_BY_KIND, make_layer
from .numerics import Rng, allocation_count
from .scan import plan_chunks

__all__ = [
    "CSV_COLUMNS",
    "BenchConfig",
    "BenchRecord",
    "run_bench",
    "write_csv",
    "ValidationReport",
    "run_validation",
    "scaling_report",
]

CSV_COLUMNS = ["layer", "phase", "batch", "seqlen", "d_model", "d_state",
               "dtype", "threads", "mean_ms", "std_ms", "allocs_per_step",
               "status"]


@dataclass
class BenchConfig:
    """One benchmark sweep; defaults mirror the measurement protocol."""

    layer: str = "lru"
    phase: str = "train"
    batch_sizes: list = field(default_factory=lambda: [1])
    seq_lens: list = field(default_factory=lambda: [64])
    d_models: list = field(default_factory=lambda: [32])
    d_state: int = 16
    warmup: int = 10
    iters: int = 90
    repeats: int = 5
    threads: int = 1
    dtype: str = "f64"
    seed: int = 0

    def __post_init__(self):
        if self.layer not in LAYER_KINDS:
            raise ValueError(f"layer must be one of {LAYER_KINDS}, got {self.layer!r}")
        if self.phase not in ("train", "infer"):
            raise ValueError(f"phase must be 'train' or 'infer', got {self.phase!r}")
        for name in ("warmup", "iters", "repeats"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        for name in ("batch_sizes", "seq_lens", "d_models"):
            vals = [int(v) for v in getattr(self, name)]
            if not vals or min(vals) < 1:
                raise ValueError(f"{name} must be a non-empty list of positive ints")
            setattr(self, name, vals)


@dataclass
class BenchRecord:
    layer: str
    phase: str
    batch: int
    seqlen: int
    d_model: int
    d_state: int
    dtype: str
    threads: int
    mean_ms: float | None
    std_ms: float | None
    allocs_per_step: float | None
    status: str = "ok"
    iters_completed: int = 0

    def csv_row(self):
        def num(v):
            return "" if v is None else f"{v:.6f}"

        return [self.layer, self.phase, self.batch, self.seqlen, self.d_model,
                self.d_state, self.dtype, self.threads, num(self.mean_ms),
                num(self.std_ms), num(self.allocs_per_step), self.status]


def _point_layer(cfg, d_model):
    d_state = None if cfg.layer == "rglru" else cfg.d_state
    return make_layer(cfg.layer, d_model, d_state=d_state, dtype=cfg.dtype,
                      seed=cfg.seed)


def _bench_point(cfg, batch, seqlen, d_model):
    layer = _point_layer(cfg, d_model)
    rng = Rng(cfg.seed)
    u = np.asarray(rng.normal((batch, seqlen, d_model)), layer.rdt)
    mode = "parallel" if cfg.threads > 1 else "sequential"
    allocs = None

    if cfg.phase == "train":
        gy = np.asarray(rng.normal((batch, seqlen, d_model)), layer.rdt)

        def one_iter():
            _, tape = layer.forward(u, mode, workers=cfg.threads, tape=True)
            layer_backward(layer, tape, gy)
    else:
        state = layer.init_state(batch)

        def one_iter():
            for k in range(seqlen):
                layer.step(state, u[:, k])

    means = []
    for _ in range(cfg.repeats):
        for _ in range(cfg.warmup):
            one_iter()
        t0 = time.perf_counter()
        for _ in range(cfg.iters):
            one_iter()
        means.append((time.perf_counter() - t0) / cfg.iters * 1000.0)
    if cfg.phase == "infer":
        a0 = allocation_count()
        one_iter()
        allocs = (allocation_count() - a0) / seqlen
    mean_ms = float(np.mean(means))
    std_ms = float(np.std(means, ddof=1)) if cfg.repeats > 1 else 0.0
    return BenchRecord(cfg.layer, cfg.phase, batch, seqlen, d_model,
                       cfg.d_state, cfg.dtype, cfg.threads, mean_ms, std_ms,
                       allocs, "ok", cfg.iters * cfg.repeats)


def run_bench(cfg: BenchConfig, out=None) -> list[BenchRecord]:
    """Time every cross-product point; out-of-memory points become
    status=skipped rows instead of aborting the sweep."""
    records = []
    for batch, seqlen, d_model in itertools.product(
            cfg.batch_sizes, cfg.seq_lens, cfg.d_models):
        try:
            records.append(_bench_point(cfg, batch, seqlen, d_model))
        except MemoryError:
            records.append(BenchRecord(
                cfg.layer, cfg.phase, batch, seqlen, d_model, cfg.d_state,
                cfg.dtype, cfg.threads, None, None, None, "skipped", 0))
    if out is not None:
        write_csv(records, out)
    return records


def write_csv(records, out):
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow(rec.csv_row())


# ---------------------------------------------------------------------------
# Validation sweep


# The equivalence grid: boundary lengths (1 step, 2 steps, one past the
# 256-step chunk floor, multi-chunk) x small/large extents x both dtypes.
SWEEP_LENGTHS = (1, 2, 257, 1024)
SWEEP_BATCHES = (1, 4)
SWEEP_D_MODELS = (1, 8)
SWEEP_D_STATES = (2, 16)
EQUIV_TOL = {"f64": 1e-10, "f32": 1e-4}
GRAD_TOL = 1e-5


@dataclass
class ValidationReport:
    equivalence: dict  # (kind, scheme, mode, dtype) -> max relative error
    gradients: dict  # (kind, scheme) -> max relative error over seeds
    passed: bool

    def __str__(self):
        lines = ["mode-equivalence (max relative error vs sequential)"]
        lines.append(f"{'layer':7s}{'disc':10s}{'dtype':7s}{'parallel':>12s}{'step':>12s}  result")
        for (kind, scheme, dtype) in sorted({(k, s, d) for (k, s, _, d) in self.equivalence}):
            e_par = self.equivalence[(kind, scheme, "parallel", dtype)]
            e_step = self.equivalence[(kind, scheme, "step", dtype)]
            ok = max(e_par, e_step) <= EQUIV_TOL[dtype]
            lines.append(f"{kind:7s}{scheme or '-':10s}{dtype:7s}{e_par:12.2e}{e_step:12.2e}  "
                         f"{'pass' if ok else 'FAIL'}")
        lines.append("gradient consistency (max relative error vs finite differences)")
        lines.append(f"{'layer':7s}{'disc':10s}{'max rel':>12s}  result")
        for (kind, scheme), err in sorted(self.gradients.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
            ok = err <= GRAD_TOL
            lines.append(f"{kind:7s}{scheme or '-':10s}{err:12.2e}  {'pass' if ok else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _schemes_for(kind):
    return SCHEMES_BY_KIND[kind] or (None,)


def _equiv_errors(kind, scheme, dtype):
    """Max relative error of parallel and step-fold vs sequential over the grid."""
    e_par = e_step = 0.0
    for L, B, m, n in itertools.product(
            SWEEP_LENGTHS, SWEEP_BATCHES, SWEEP_D_MODELS, SWEEP_D_STATES):
        if kind == "rglru" and n != SWEEP_D_STATES[0]:
            continue  # state width is structurally d_model; dedupe the axis
        layer = make_layer(kind, m, d_state=(None if kind == "rglru" else n),
                           discretization=scheme, dtype=dtype,
                           seed=zlib.crc32(f"{kind}/{L}/{B}/{m}/{n}".encode()))
        u = np.asarray(Rng((L, B, m, n, 5)).normal((B, L, m)), layer.rdt)
        y_seq = layer.forward(u)
        y_par = layer.forward(u, "parallel", workers=4)
        st = layer.init_state(B)
        y_fold = np.empty_like(y_seq)
        for k in range(L):
            yk, st = layer.step(st, u[:, k])
            y_fold[:, k] = yk
        ref = max(float(np.max(np.abs(y_seq))), 1e-12)
        e_par = max(e_par, float(np.max(np.abs(y_par - y_seq))) / ref)
        e_step = max(e_step, float(np.max(np.abs(y_fold - y_seq))) / ref)
    return e_par, e_step


def _grad_error(kind, scheme, seeds=5):
    worst = 0.0
    tag = zlib.crc32(f"{kind}/{scheme}".encode())
    for seed in range(seeds):
        layer = make_layer(kind, 3, d_state=(None if kind == "rglru" else 4),
                           discretization=scheme, dtype="f64", seed=seed)
        u = Rng((tag, seed)).normal((2, 12, 3))
        rep = check_layer_gradients(layer, u, rng=Rng(seed + 17), h=1e-5,
                                    tol=GRAD_TOL)
        worst = max(worst, rep.max_rel)
    return worst


def run_validation(scope: str = "all", seeds: int = 5, verbose: bool = True):
    """Run both sweeps; returns a ValidationReport (printed when verbose)."""
    kinds = LAYER_KINDS if scope == "all" else (scope,)
    for k in kinds:
        if k not in LAYER_KINDS:
            raise ValueError(f"scope must be 'all' or one of {LAYER_KINDS}, got {scope!r}")
    equivalence, gradients = {}, {}
    passed = True
    for kind in kinds:
        for scheme in _schemes_for(kind):
            for dtype in ("f64", "f32"):
                e_par, e_step = _equiv_errors(kind, scheme, dtype)
                equivalence[(kind, scheme, "parallel", dtype)] = e_par
                equivalence[(kind, scheme, "step", dtype)] = e_step
                passed &= max(e_par, e_step) <= EQUIV_TOL[dtype]
            err = _grad_error(kind, scheme, seeds)
            gradients[(kind, scheme)] = err
            passed &= err <= GRAD_TOL
    report = ValidationReport(equivalence, gradients, passed)
    if verbose:
        print(report)
    return report


# ---------------------------------------------------------------------------
# Scaling report


SCALING_COLUMNS = ["layer", "length", "threads", "seq_ms", "par_ms",
                   "speedup", "fallback"]


def _time_call(fn, repeats=3):
    fn()  # warm up caches and JIT paths
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def scaling_report(layer_kind="lru", lengths=(4096, 65536), threads=(1, 2, 4, 8),
                   d_model=4, d_state=64, dtype="f64", repeats=3, out=None,
                   seed=0):
    """Sequential vs parallel forward wall time per (length, threads) cell.

    Returns a list of row dicts (and writes CSV when `out` is given). The
    fallback column marks cells whose length planned into a single chunk, so
    the parallel call took the sequential code path.
    """
    lengths = [int(v) for v in lengths]
    if lengths != sorted(lengths):
        raise ValueError("lengths must be sorted ascending")
    rows = []
    for L in lengths:
        layer = make_layer(layer_kind, d_model,
                           d_state=(None if layer_kind == "rglru" else d_state),
                           dtype=dtype, seed=seed)
        u = np.asarray(Rng((seed, L)).normal((1, L, d_model)), layer.rdt)
        t_seq = _time_call(lambda: layer.forward(u), repeats)
        for th in threads:
            th = int(th)
            t_par = _time_call(lambda: layer.forward(u, "parallel", workers=th),
                               repeats)
            rows.append({
                "layer": layer_kind, "length": L, "threads": th,
                "seq_ms": t_seq, "par_ms": t_par,
                "speedup": t_seq / t_par if t_par > 0 else float("inf"),
                "fallback": len(plan_chunks(L, th)) == 1,
            })
    if out is not None:
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SCALING_COLUMNS)
            for r in rows:
                w.writerow([r["layer"], r["length"], r["threads"],
                            f"{r['seq_ms']:.6f}", f"{r['par_ms']:.6f}",
                            f"{r['speedup']:.4f}", int(r["fallback"])])
    return rows
