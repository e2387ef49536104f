"""Command-line experiments.

Subcommands: ``decompose``, ``beta-sweep``, ``rank-sweep``, ``compare``,
``nmf-compress`` and ``plot-script``. Every file a run produces is written
under ``--out``. Exit status is 0 when all runs finished cleanly, 1 when a
run hit a numeric failure or an input error, and 2 on usage errors.
"""
import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io as dio
from .linalg import frobenius_norm
from .nmf import METHODS, compress_basis, nmf_hals, render_montage, tol_nmf
from .solver import NmdParams, fit

logger = logging.getLogger("nmdtm")

DEFAULT_BETAS = (0.01, 0.1, 0.3, 0.45, 0.6, 0.75, 0.9, 0.95)


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    return vals


def _int_list(text):
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None
    return vals


def _workers():
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1


def _fmt(x):
    return f"{x:.12g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def build_parser():
    data = argparse.ArgumentParser(add_help=False)
    g = data.add_argument_group("data")
    g.add_argument("--input", required=True, help="data matrix file")
    g.add_argument("--format", choices=dio.FORMATS, help="input format (default: sniffed)")
    g.add_argument("--labels", help="IDX1 label file for --per-class subsetting")
    g.add_argument("--per-class", type=int, help="keep this many samples of each label")
    g.add_argument("--class-offset", type=int, default=0,
                   help="skip this many samples of each label before subsetting")
    g.add_argument("--orientation", choices=("samples_as_rows", "samples_as_cols"),
                   default="samples_as_rows")
    g.add_argument("--raw", action="store_true", help="keep IDX pixels as 0..255")

    solver = argparse.ArgumentParser(add_help=False)
    g = solver.add_argument_group("solver")
    g.add_argument("--rank", type=int, default=None)
    g.add_argument("--alpha", type=float, default=0.95)
    g.add_argument("--beta", type=float, default=0.95)
    g.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    g.add_argument("--max-iters", type=int, default=1000)
    g.add_argument("--time-budget", type=float, default=None, help="seconds per run")
    g.add_argument("--rel-tol", type=float, default=None,
                   help="stop after 5 iterations with |change in rel. error| <= tol")
    g.add_argument("--svd", choices=("auto", "exact", "randomized"), default="auto")

    out = argparse.ArgumentParser(add_help=False)
    g = out.add_argument_group("output")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-timing", action="store_true",
                   help="record 0 seconds everywhere so outputs are byte-reproducible")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nmdtm", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("decompose", parents=[data, solver, out], help="one fit")
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("beta-sweep", parents=[data, solver, out],
                        help="one fit per beta, with alpha = beta")
    sp.add_argument("--betas", type=_float_list, default=list(DEFAULT_BETAS))
    sp.set_defaults(func=cmd_beta_sweep)

    sp = sub.add_parser("rank-sweep", parents=[data, solver, out], help="one fit per rank")
    sp.add_argument("--ranks", type=_int_list, required=True)
    sp.set_defaults(func=cmd_rank_sweep)

    sp = sub.add_parser("compare", parents=[out], help="Tol columns for several traces")
    sp.add_argument("--traces", nargs="+", required=True)
    sp.add_argument("--names", nargs="+", help="labels for the traces (default: file stems)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("nmf-compress", parents=[data, solver, out],
                        help="NMF basis compression and refit error")
    sp.add_argument("--ranks", type=_int_list, required=True)
    sp.add_argument("--inner-rank", type=int, default=100, help="NMF rank p")
    sp.add_argument("--basis", help="use this basis instead of running the NMF")
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    sp.add_argument("--nmf-iters", type=int, default=500)
    sp.add_argument("--nnls-iters", type=int, default=500)
    sp.add_argument("--montage", nargs=2, type=int, metavar=("HEIGHT", "WIDTH"))
    sp.add_argument("--grid-cols", type=int, default=10)
    sp.set_defaults(func=cmd_nmf_compress)

    sp = sub.add_parser("plot-script", parents=[out],
                        help="write a matplotlib script for the CSVs in --out")
    sp.set_defaults(func=cmd_plot_script)
    return p


def _load(args):
    fmt = args.format or dio.sniff_format(args.input)
    handle = dio.DatasetHandle(args.input, fmt, args.orientation,
                               "raw" if args.raw else "unit_scale")
    m = dio.load_matrix(handle)
    if args.per_class is not None:
        if not args.labels:
            raise UsageError("--per-class needs --labels")
        m = dio.subset_per_class(m, dio.read_idx_labels(args.labels), args.per_class,
                                 args.class_offset)
    elif args.labels:
        raise UsageError("--labels given without --per-class")
    return m


def _params(args, **over):
    kw = dict(rank=args.rank, alpha=args.alpha, beta=args.beta, lam=args.lam,
              max_iters=args.max_iters, time_limit=args.time_budget,
              rel_change_tol=args.rel_tol, seed=args.seed, svd_method=args.svd)
    kw.update(over)
    try:
        return NmdParams(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _clock(args):
    if args.no_timing:
        if args.time_budget is not None:
            raise UsageError("--time-budget cannot be combined with --no-timing")
        return None
    return time.perf_counter


def _run_all(jobs):
    """Run zero-argument callables, possibly in parallel, results in input order."""
    n = _workers()
    if n == 1 or len(jobs) < 2:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda job: job(), jobs))


def cmd_decompose(args):
    if args.rank is None:
        raise UsageError("--rank is required")
    params = _params(args)
    m = _load(args)
    res = fit(m, params, clock=_clock(args))
    dio.write_matrix_market(os.path.join(args.out, "U.mtx"), res.u)
    dio.write_matrix_market(os.path.join(args.out, "V.mtx"), res.v)
    dio.write_trace_csv(os.path.join(args.out, "trace.csv"), res.trace)
    seconds = res.trace[-1].seconds if res.trace.records else res.setup_seconds
    print(f"rel_error={_fmt(res.rel_error)} iterations={res.iterations} "
          f"seconds={seconds:.3f} stop_reason={res.stop_reason}")
    if res.stop_reason == "numeric_failure":
        logger.error(res.message)
        return 1
    return 0


def cmd_beta_sweep(args):
    if args.rank is None:
        raise UsageError("--rank is required")
    if not args.betas:
        raise UsageError("--betas must not be empty")
    plist = [_params(args, alpha=b, beta=b) for b in args.betas]
    m = _load(args)
    clock = _clock(args)
    results = _run_all([lambda p=p: fit(m, p, clock=clock) for p in plist])
    rows = []
    status = 0
    for b, res in zip(args.betas, results):
        dio.write_trace_csv(os.path.join(args.out, f"trace_beta_{b:g}.csv"), res.trace)
        rows.append([f"{b:g}", _fmt(res.rel_error)])
        print(f"beta={b:g} rel_error={_fmt(res.rel_error)} stop_reason={res.stop_reason}")
        if res.stop_reason == "numeric_failure":
            status = 1
    _write_rows(os.path.join(args.out, "summary.csv"), ["beta", "rel_error"], rows)
    return status


def cmd_rank_sweep(args):
    if not args.ranks:
        raise UsageError("--ranks must not be empty")
    m = _load(args)
    clock = _clock(args)
    limit = min(m.shape)
    jobs, kept = [], []
    for r in args.ranks:
        if r < 1:
            raise UsageError(f"invalid rank {r}")
        if r > limit:
            logger.warning("rank %d exceeds min%s; skipped", r, m.shape)
            continue
        p = _params(args, rank=r)
        jobs.append(lambda p=p: fit(m, p, clock=clock))
        kept.append(r)
    results = dict(zip(kept, _run_all(jobs)))
    rows, status, prev_t = [], 0, None
    for r in args.ranks:
        if r not in results:
            rows.append([r, "", "", "skipped"])
            continue
        res = results[r]
        dio.write_trace_csv(os.path.join(args.out, f"trace_rank_{r}.csv"), res.trace)
        t = 0.0 if clock is None else res.mean_iter_seconds
        if prev_t is not None and t < prev_t:
            logger.warning("mean iteration time dropped from %.4g to %.4g s at rank %d",
                           prev_t, t, r)
        prev_t = t
        rows.append([r, _fmt(res.rel_error), f"{t:.6f}", res.stop_reason])
        print(f"rank={r} rel_error={_fmt(res.rel_error)} mean_iter_seconds={t:.6f}")
        if res.stop_reason == "numeric_failure":
            status = 1
    _write_rows(os.path.join(args.out, "summary.csv"),
                ["rank", "rel_error", "mean_iter_seconds", "status"], rows)
    return status


def tol_columns(finals):
    """Tol of each final relative error against the best one."""
    best = min(finals)
    return [f - best for f in finals]


def cmd_compare(args):
    if len(args.traces) < 2:
        raise UsageError("compare needs at least two traces")
    names = args.names or [os.path.splitext(os.path.basename(t))[0] for t in args.traces]
    if len(names) != len(args.traces) or len(set(names)) != len(names):
        raise UsageError("--names must give one distinct name per trace")
    traces = [dio.read_trace_csv(t) for t in args.traces]
    for path, tr in zip(args.traces, traces):
        if len(tr["rel_error"]) == 0:
            raise dio.DataFormatError("trace has no records", path, 2)
    finals = [float(tr["rel_error"][-1]) for tr in traces]
    tol_min = min(finals)
    rows = []
    for name, tr, final in zip(names, traces, finals):
        cols = list(tr)
        with open(os.path.join(args.out, f"{name}_tol.csv"), "w", newline="") as fh:
            fh.write(",".join(cols + ["tol"]) + "\n")
            for i in range(len(tr["k"])):
                vals = [tr[c][i] for c in cols]
                cells = [f"{int(v)}" if c == "k" else f"{v:.12g}" for c, v in zip(cols, vals)]
                cells.append(f"{tr['rel_error'][i] - tol_min:.12g}")
                fh.write(",".join(cells) + "\n")
        rows.append([name, _fmt(final), _fmt(final - tol_min), len(tr["k"])])
        print(f"{name}: final rel_error={_fmt(final)} tol={_fmt(final - tol_min)}")
    _write_rows(os.path.join(args.out, "compare_summary.csv"),
                ["name", "final_rel_error", "tol", "iterations"], rows)
    return 0


def cmd_nmf_compress(args):
    if not args.ranks:
        raise UsageError("--ranks must not be empty")
    m = _load(args)
    if args.basis:
        fmt = dio.sniff_format(args.basis)
        basis = dio.load_matrix(dio.DatasetHandle(args.basis, fmt))
        if basis.shape[0] != m.shape[0]:
            raise UsageError(f"basis has {basis.shape[0]} rows, data has {m.shape[0]}")
    else:
        basis = nmf_hals(m, args.inner_rank, iters=args.nmf_iters, seed=args.seed).w_basis
    if args.montage:
        h, w = args.montage
        dio.write_pgm(os.path.join(args.out, "basis.pgm"),
                      render_montage(basis, h, w, args.grid_cols))
    rows, status = [], 0
    for r in args.ranks:
        if not 1 <= r <= min(basis.shape):
            raise UsageError(f"rank {r} out of range for a {basis.shape} basis")
        for method in args.methods:
            params = _params(args, rank=r)
            approx, rep = compress_basis(basis, r, method, params)
            if not np.all(np.isfinite(approx)):
                status = 1
            rep.tol_nmf = tol_nmf(m, approx, iters=args.nnls_iters)
            if args.no_timing:
                rep.seconds = 0.0
            rows.append([rep.method, rep.rank, _fmt(rep.basis_rel_error), _fmt(rep.tol_nmf),
                         f"{rep.seconds:.6f}"])
            print(f"method={method} rank={r} basis_rel_error={_fmt(rep.basis_rel_error)} "
                  f"tol_nmf={_fmt(rep.tol_nmf)}")
            if args.montage:
                h, w = args.montage
                view = approx if method == "tsvd" else np.maximum(approx, 0)
                dio.write_pgm(os.path.join(args.out, f"{method}_r{r}.pgm"),
                              render_montage(view, h, w, args.grid_cols))
    _write_rows(os.path.join(args.out, "report.csv"),
                ["method", "rank", "basis_rel_error", "tol_nmf", "seconds"], rows)
    logger.info("basis norm %.6g", frobenius_norm(basis))
    return status


PLOT_SCRIPT = '''"""Plot the CSVs written by nmdtm into this directory."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots()
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "rel_error" not in rows[0] or "k" not in rows[0]:
        continue
    key = "tol" if "tol" in rows[0] else "rel_error"
    timed = any(float(r["seconds"]) > 0 for r in rows)
    xs = [float(r["seconds"] if timed else r["k"]) for r in rows]
    ax.semilogy(xs, [max(float(r[key]), 1e-16) for r in rows],
                label=os.path.basename(path)[:-4])
ax.set_xlabel("seconds (or iteration)")
ax.set_ylabel("relative error")
ax.legend()
fig.savefig(os.path.join(here, "traces.png"), dpi=150)
'''


def cmd_plot_script(args):
    with open(os.path.join(args.out, "plot_traces.py"), "w") as fh:
        fh.write(PLOT_SCRIPT)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "rank", None) is not None and args.rank < 1:
        parser.error(f"--rank must be positive, got {args.rank}")
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"nmdtm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
