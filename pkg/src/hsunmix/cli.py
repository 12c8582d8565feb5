"""Command-line interface: ``hsunmix synth | train | eval | gradcheck``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
``HSUNMIX_THREADS`` caps BLAS threads (default 1, which keeps runs
bit-reproducible).
"""
import argparse
import json
import math
import os
import sys
from pathlib import Path

from .io import (DataError, RunConfig, dump_config, load_config, load_cube, parse_overrides, save_cube,
                 sidecar_path, write_pgm)
from .tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# File names shared by dataset and run directories, so that a dataset can be
# scored against itself.
CUBE = "cube.bin"
ABUND = "abund.bin"
BFIELD = "bfield.bin"
BETA = "beta.bin"
ENDMEMBERS = "endmembers.csv"
DATASET_META = "dataset.meta.json"
CHECKPOINT = "checkpoint.bin"
LOSSES = "losses.csv"
CONFIG_ECHO = "config.txt"
REPORT = "eval.json"
HISTOGRAM = "b_histogram.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _snr(text):
    if text.lower() in ("clean", "inf"):
        return math.inf
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"SNR must be a number of dB or 'clean', got {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError("SNR must be finite or 'clean'")
    return v


def _thread_limit():
    raw = os.environ.get("HSUNMIX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HSUNMIX_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"HSUNMIX_THREADS must be a positive integer, got {n}")
    return n


# -- synth ----------------------------------------------------------------------

def cmd_synth(args):
    from .mixing import gen_dataset, save_endmembers

    ds = gen_dataset(args.model, args.rows, args.cols, args.R, args.L, snr_db=args.snr,
                     seed=args.seed, smoothness=args.smoothness, contrast=args.contrast)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_cube(out / CUBE, ds.cube)
    save_cube(out / ABUND, ds.abundances)
    save_endmembers(out / ENDMEMBERS, ds.endmembers)
    for stale in (BFIELD, BETA):
        for f in (out / stale, sidecar_path(out / stale)):
            f.unlink(missing_ok=True)
    if ds.bfield is not None:
        save_cube(out / BFIELD, ds.bfield)
    if ds.beta is not None:
        save_cube(out / BETA, ds.beta)
    meta = {"model": args.model, "R": args.R, "bands": args.L, "rows": args.rows, "cols": args.cols,
            "snr_db": None if math.isinf(args.snr) else args.snr, "seed": args.seed,
            "smoothness": args.smoothness, "contrast": args.contrast}
    (out / DATASET_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.model} dataset {args.rows}x{args.cols}x{args.L}, R={args.R} to {out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def resolve_config(args):
    """Defaults, then the config file, then ``--set`` pairs, then dedicated flags."""
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = parse_overrides(args.set or [])
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.init is not None:
        changes["init"] = args.init
    if args.ablate is not None:
        changes["ablate"] = None if args.ablate == "none" else args.ablate
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise DataError(f"config: {exc}") from None


def _endmember_count(data_dir, R):
    if R is not None:
        return R
    path = data_dir / ENDMEMBERS
    if not path.exists():
        raise DataError(f"{data_dir}: pass -R or provide {ENDMEMBERS} to fix the endmember count")
    from .mixing import load_endmembers

    return load_endmembers(path).shape[0]


def cmd_train(args):
    from .pipeline import fit
    from .mixing import save_endmembers
    from .training import save_checkpoint

    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise DataError(f"{data_dir}: dataset directory not found")
    cfg = resolve_config(args)
    cube = load_cube(data_dir / CUBE)
    R = _endmember_count(data_dir, args.R)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(dump_config(cfg))

    every = max(1, cfg.epochs // 10)

    def progress(epoch, total, re, sad):
        if not args.quiet and (epoch % every == 0 or epoch == 1):
            print(f"epoch {epoch:5d}  loss {total:.6f}  re {re:.6f}  sad {sad:.6f}", flush=True)

    model, record = fit(cube, R, cfg, callback=progress, checkpoint_path=out / CHECKPOINT)
    save_checkpoint(out / CHECKPOINT, model)
    (out / LOSSES).write_text(record.to_csv())
    A, M, B = model.predict(cube)
    save_endmembers(out / ENDMEMBERS, M)
    save_cube(out / ABUND, A)
    save_cube(out / BFIELD, B)
    for r in range(R):
        write_pgm(out / f"abund_{r}.pgm", A[..., r])
    print(f"trained {cfg.epochs} epochs in {record.wall_time:.1f}s; outputs in {out}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def _maybe_cube(path):
    return load_cube(path) if path.exists() else None


def cmd_eval(args):
    from .metrics import b_histogram, evaluate, histogram_csv
    from .mixing import load_endmembers

    run, truth = Path(args.run), Path(args.truth)
    for d in (run, truth):
        if not d.is_dir():
            raise DataError(f"{d}: directory not found")
    for d, name in ((run, ENDMEMBERS), (truth, ENDMEMBERS)):
        if not (d / name).exists():
            raise DataError(f"{d}: missing {name}")
    M_hat, M_true = load_endmembers(run / ENDMEMBERS), load_endmembers(truth / ENDMEMBERS)
    if M_hat.shape[0] != M_true.shape[0]:
        raise DataError(f"endmember count mismatch: run has {M_hat.shape[0]}, truth has {M_true.shape[0]}")
    if M_hat.shape != M_true.shape:
        raise DataError(f"endmember shapes differ: {M_hat.shape} vs {M_true.shape}")
    A_hat, A_true = load_cube(run / ABUND), load_cube(truth / ABUND)
    if A_hat.shape != A_true.shape:
        raise DataError(f"abundance shapes differ: {A_hat.shape} vs {A_true.shape}")
    B_hat, B_true = _maybe_cube(run / BFIELD), _maybe_cube(truth / BFIELD)
    if B_hat is not None and B_true is not None and B_hat.shape != B_true.shape:
        raise DataError(f"B field shapes differ: {B_hat.shape} vs {B_true.shape}")
    report = evaluate(A_hat, M_hat, A_true, M_true, B_hat, B_true)
    out = Path(args.output) if args.output else run / REPORT
    out.write_text(report.to_json())
    if B_hat is not None:
        centers, counts = b_histogram(B_hat, bins=args.bins)
        (out.parent / HISTOGRAM).write_text(histogram_csv(centers, counts))
    print(report.to_json(), end="")
    return EXIT_OK


# -- gradcheck ------------------------------------------------------------------

def cmd_gradcheck(args):
    from .gradsuite import DEFAULT_TOLERANCE, SUITE, SUITE_EPS, run_suite

    unknown = [n for n in args.op or [] if n not in SUITE]
    if unknown:
        raise UsageError(f"unknown --op {', '.join(unknown)}; available: {', '.join(SUITE)}")
    eps = SUITE_EPS if args.eps is None else args.eps
    if not 1e-6 <= eps <= 1e-1:
        raise UsageError("--eps must lie in [1e-6, 1e-1]")
    tol = DEFAULT_TOLERANCE if args.tol is None else args.tol
    results = run_suite(args.op, eps=eps)
    failed = 0
    for name, err in results.items():
        ok = err < tol
        failed += not ok
        print(f"{name:20s} {err:.3e}  {'PASS' if ok else 'FAIL'}")
    print(f"{len(results) - failed}/{len(results)} passed (eps {eps:g}, tol {tol:g})")
    return EXIT_OK if not failed else EXIT_NUMERIC


# -- parser -----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="hsunmix", description="Nonlinear hyperspectral unmixing.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    s.add_argument("--model", required=True, choices=("lmm", "ppnmm", "gbm"))
    s.add_argument("--rows", type=_positive_int, default=100)
    s.add_argument("--cols", type=_positive_int, default=100)
    s.add_argument("-R", type=_positive_int, default=4, help="number of endmembers")
    s.add_argument("-L", type=_positive_int, default=224, help="number of bands")
    s.add_argument("--snr", type=_snr, default=30.0, help="dB, or 'clean' for no noise")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--smoothness", type=float, default=2.0)
    s.add_argument("--contrast", type=float, default=4.0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("-d", "--data", required=True)
    t.add_argument("-c", "--config", help="flat key = value file")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("-R", type=_positive_int, help="endmember count (default: rows of endmembers.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--init", choices=("vca", "farthest_point"))
    t.add_argument("--ablate", choices=("spatial", "spectral", "none"))
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a run against ground truth")
    e.add_argument("--run", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("-o", "--output", help=f"report path (default: <run>/{REPORT})")
    e.add_argument("--bins", type=_positive_int, default=20)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and block")
    g.add_argument("--op", action="append", help="restrict to this entry (repeatable)")
    g.add_argument("--eps", type=float)
    g.add_argument("--tol", type=float)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        threads = _thread_limit()
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"hsunmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"hsunmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
