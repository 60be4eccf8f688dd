"""Command-line entry point.

    linrec bench train|infer --layer lru --batch-sizes 1,2 --seq-lens 64,256
                             [--d-models 32] [--d-state 16] [--warmup 10]
                             [--iters 90] [--repeats 5] [--threads 1]
                             [--dtype f64] [--seed 0] [--out bench.csv]
    linrec validate [--layer KIND] [--seeds 5]
    linrec scaling --layer lru --lengths 4096,65536 --threads 1,2,4,8
                   [--d-model 4] [--d-state 64] [--out scaling.csv]

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import sys

from .bench import BenchConfig, run_bench, run_validation, scaling_report
from .layers import LAYER_KINDS


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one value")
    return vals


def _build_parser():
    p = argparse.ArgumentParser(prog="linrec", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="time layers over a sweep, CSV out")
    b.add_argument("phase", choices=["train", "infer"])
    b.add_argument("--layer", default="lru", choices=list(LAYER_KINDS))
    b.add_argument("--batch-sizes", type=_int_list, default=[1])
    b.add_argument("--seq-lens", type=_int_list, default=[64])
    b.add_argument("--d-models", type=_int_list, default=[32])
    b.add_argument("--d-state", type=int, default=16)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--iters", type=int, default=90)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--dtype", default="f64", choices=["f32", "f64"])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)

    v = sub.add_parser("validate", help="mode-equivalence and gradient sweeps")
    v.add_argument("--layer", default="all", choices=["all"] + list(LAYER_KINDS))
    v.add_argument("--seeds", type=int, default=5)

    s = sub.add_parser("scaling", help="sequential vs parallel scan timing")
    s.add_argument("--layer", default="lru", choices=list(LAYER_KINDS))
    s.add_argument("--lengths", type=_int_list, default=[4096, 65536])
    s.add_argument("--threads", type=_int_list, default=[1, 2, 4, 8])
    s.add_argument("--d-model", type=int, default=4)
    s.add_argument("--d-state", type=int, default=64)
    s.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench":
            cfg = BenchConfig(
                layer=args.layer, phase=args.phase,
                batch_sizes=args.batch_sizes, seq_lens=args.seq_lens,
                d_models=args.d_models, d_state=args.d_state,
                warmup=args.warmup, iters=args.iters, repeats=args.repeats,
                threads=args.threads, dtype=args.dtype, seed=args.seed)
            records = run_bench(cfg, out=args.out)
            for rec in records:
                print(",".join(str(v) for v in rec.csv_row()))
            if args.out:
                print(f"wrote {args.out}", file=sys.stderr)
            return 0
        if args.command == "validate":
            report = run_validation(scope=args.layer, seeds=args.seeds)
            return 0 if report.passed else 1
        if args.command == "scaling":
            rows = scaling_report(
                layer_kind=args.layer, lengths=args.lengths,
                threads=args.threads, d_model=args.d_model,
                d_state=args.d_state, out=args.out)
            print(",".join(str(c) for c in
                           ["layer", "length", "threads", "seq_ms", "par_ms",
                            "speedup", "fallback"]))
            for r in rows:
                print(f"{r['layer']},{r['length']},{r['threads']},"
                      f"{r['seq_ms']:.3f},{r['par_ms']:.3f},"
                      f"{r['speedup']:.3f},{int(r['fallback'])}")
            return 0
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
