"""Command line entry point: ``corap bench | decompose | gen``."""
from __future__ import annotations

import argparse
import math
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .bench import ALGORITHMS, ExperimentConfig, format_summary, generate_instance, run_algorithm, \
    run_experiment, summarize, write_summary
from .errors import StageError
from .tensor import read_tensor, write_tensor

# config-file keys and their flag spellings are interchangeable ("max_power" == "max-power")
BENCH_KEYS = (
    "dims", "rank", "oversample", "oversample_ratio", "max_power", "snr", "rank_sweep", "algos",
    "trials", "seed", "out", "threads", "rap_power", "shared_power", "selection", "strict_perm",
)


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _floats(text):
    out = []
    for x in str(text).replace(" ", "").split(","):
        if x:
            out.append(math.inf if x.lower() in ("inf", "+inf") else float(x))
    return tuple(out)


def _names(text):
    return tuple(x for x in str(text).replace(" ", "").split(",") if x)


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


PARSERS = {
    "dims": _ints, "rank": int, "oversample": int, "oversample_ratio": float, "max_power": int,
    "snr": _floats, "rank_sweep": _ints, "algos": _names, "trials": int, "seed": int, "out": str,
    "threads": int, "rap_power": int, "shared_power": int, "selection": str, "strict_perm": _bool,
}


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = PARSERS[key](value)
    return values


def _thread_limit(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _add_bench_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--dims", type=_ints)
    p.add_argument("--rank", type=int)
    p.add_argument("--oversample", type=int, help="projector width R'")
    p.add_argument("--oversample-ratio", type=float, help="use R' = ceil(ratio * R) instead")
    p.add_argument("--max-power", type=int, help="number of coupled triads M")
    p.add_argument("--snr", type=_floats, help="comma separated dB values, 'inf' for noiseless")
    p.add_argument("--rank-sweep", type=_ints)
    p.add_argument("--algos", type=_names, help=f"subset of {','.join(ALGORITHMS)}")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV file for per-run records")
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    p.add_argument("--rap-power", type=int)
    p.add_argument("--shared-power", type=int)
    p.add_argument("--selection", choices=("core", "data"))
    p.add_argument("--strict-perm", action="store_const", const=True, default=None)


def build_experiment(args) -> tuple:
    values = read_config(args.config) if args.config else {}
    for key in BENCH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    kw = {}
    renames = {"snr": "snr_db", "algos": "algorithms", "trials": "n_trials", "out": "output_path"}
    for key, value in values.items():
        if key == "threads":
            continue
        kw[renames.get(key, key)] = value
    return ExperimentConfig(**kw), values.get("threads")


def cmd_bench(args):
    try:
        cfg, threads = build_experiment(args)
    except Exception as exc:
        raise StageError("config", exc) from exc
    with _thread_limit(threads):
        records = run_experiment(cfg)
    rows = summarize(records)
    print(format_summary(rows))
    if cfg.output_path:
        out = Path(cfg.output_path)
        write_summary(out.with_name(out.stem + ".summary.csv"), rows)
    return 0


def cmd_decompose(args):
    try:
        t = read_tensor(args.input)
    except Exception as exc:
        raise StageError("read", exc) from exc
    oversample = args.oversample or min(2 * args.rank, min(t.shape))
    with _thread_limit(args.threads):
        factors, m_opt = run_algorithm(
            args.algo, t, args.rank, oversample, args.max_power, args.seed,
            shared_power=args.shared_power, selection=args.selection,
        )
    prefix = Path(args.out)
    for name, mat in zip("ABC", factors):
        np.savetxt(f"{prefix}_{name}.csv", mat, delimiter=",", fmt="%.17g")
    if m_opt is not None:
        print(f"m_opt = {m_opt}")
    return 0


def cmd_gen(args):
    snr = args.snr[0] if args.snr else math.inf
    t, truth = generate_instance(args.dims, args.rank, snr, args.seed)
    write_tensor(args.out, t)
    if args.truth:
        for name, mat in zip("ABC", truth):
            np.savetxt(f"{args.truth}_{name}.csv", mat, delimiter=",", fmt="%.17g")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="corap", description="Randomized and coupled-randomized CP decomposition")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="Monte Carlo comparison of direct, RAP and CoRAP CPD")
    _add_bench_flags(bench)
    bench.set_defaults(func=cmd_bench)

    dec = sub.add_parser("decompose", help="decompose one CRT3 tensor file")
    dec.add_argument("input")
    dec.add_argument("--rank", type=int, required=True)
    dec.add_argument("--algo", choices=ALGORITHMS, default="corap")
    dec.add_argument("--oversample", type=int, help="R' (default 2R)")
    dec.add_argument("--max-power", type=int, default=2)
    dec.add_argument("--shared-power", type=int, default=1)
    dec.add_argument("--selection", choices=("core", "data"), default="core")
    dec.add_argument("--seed", type=int, default=0)
    dec.add_argument("--threads", type=int)
    dec.add_argument("--out", required=True, help="prefix for <out>_A.csv, <out>_B.csv, <out>_C.csv")
    dec.set_defaults(func=cmd_decompose)

    gen = sub.add_parser("gen", help="write a synthetic instance in CRT3 format")
    gen.add_argument("--dims", type=_ints, required=True)
    gen.add_argument("--rank", type=int, required=True)
    gen.add_argument("--snr", type=_floats, help="dB, or 'inf' (default) for noiseless")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--truth", help="prefix for ground-truth factor CSVs")
    gen.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"corap {args.command}: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"corap {args.command}: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
