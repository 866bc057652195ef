"""Command-line driver: run convergence experiments to CSV and fit
experimental rates.

    sparseafem run --example 1 --scheme pc --mode adaptive \
        --max-ndof 50000 --out pc.csv
    sparseafem rates --csv pc.csv --columns err_total,est_total

The CSV has one row per refinement step with the fixed header below;
reals carry 12 significant digits.  Custom runs (constant data, no
exact solution) leave the error columns NaN.
"""

import argparse
import csv
import sys
import warnings

import numpy as np

from .afem import ADAPTIVE, UNIFORM, adaptive_solve, count_ndof
from .mesh import LSHAPE, UNIT_SQUARE, make_initial_mesh
from .optimality import SCHEMES, ProblemData
from .problems import get_example

CSV_HEADER = ("step", "ndof", "h_max", "err_y", "err_p", "err_u",
              "err_lambda", "err_total", "est_y", "est_p", "est_u",
              "est_lambda", "est_total", "effectivity", "newton_iters",
              "wall_time_ms")
_INT_COLUMNS = {"step", "ndof", "newton_iters"}


class CliError(Exception):
    pass


def _fmt(value):
    return format(float(value), ".12g")


def _record_row(record):
    return (str(record.step), str(record.ndof), _fmt(record.h_max),
            _fmt(record.err_y), _fmt(record.err_p), _fmt(record.err_u),
            _fmt(record.err_lam), _fmt(record.err_total),
            _fmt(record.est_y), _fmt(record.est_p), _fmt(record.est_u),
            _fmt(record.est_lam), _fmt(record.est_total),
            _fmt(record.effectivity), str(record.newton_iterations),
            _fmt(record.wall_time_ms))


def fit_rates(csv_path, columns):
    """Least-squares slopes of log(column) vs log(ndof) over the last
    min(5, all) rows of a run CSV.

    Non-positive and non-finite values are excluded with a warning; a
    column left with fewer than two usable points gets slope NaN.
    Unknown columns and files with fewer than 3 rows raise CliError.
    """
    try:
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            fieldnames = reader.fieldnames or []
            rows = list(reader)
    except OSError as err:
        raise CliError(f"cannot read {csv_path}: {err}") from err
    for name in columns:
        if name not in fieldnames:
            raise CliError(f"column {name!r} not present in {csv_path}")
    if "ndof" not in fieldnames:
        raise CliError(f"column 'ndof' not present in {csv_path}")
    if len(rows) < 3:
        raise CliError(f"rate fitting needs at least 3 rows, "
                       f"{csv_path} has {len(rows)}")
    tail = rows[-min(5, len(rows)):]
    ndof = np.array([float(r["ndof"]) for r in tail])
    slopes = {}
    for name in columns:
        vals = np.array([float(r[name]) for r in tail])
        usable = np.isfinite(vals) & (vals > 0)
        if not usable.all():
            warnings.warn(f"column {name!r}: excluding "
                          f"{int((~usable).sum())} zero/non-finite "
                          f"values from the rate fit")
        if usable.sum() < 2:
            slopes[name] = float("nan")
            continue
        slopes[name] = float(np.polyfit(np.log(ndof[usable]),
                                        np.log(vals[usable]), 1)[0])
    return slopes


def _build_problem(args):
    if args.example in ("1", "2"):
        return get_example(int(args.example), alpha=args.alpha,
                           beta=args.beta), None
    # custom: constant data, no exact solution
    alpha = 1e-2 if args.alpha is None else args.alpha
    beta = 0.7 if args.beta is None else args.beta
    fc, yc = args.f_const, args.yomega_const
    data = ProblemData(alpha=alpha, beta=beta, a=args.lower, b=args.upper,
                       f=lambda x, y: np.full_like(np.asarray(x, float), fc),
                       y_omega=lambda x, y: np.full_like(
                           np.asarray(x, float), yc))
    return data, args.domain


def _parse_weights(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            "expected four comma-separated weights")
    try:
        weights = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    if any(w < 0 for w in weights):
        raise argparse.ArgumentTypeError("weights must be nonnegative")
    return weights


def _run(args):
    problem, domain = _build_problem(args)
    dom = domain if domain is not None else getattr(problem, "domain",
                                                   UNIT_SQUARE)
    initial = count_ndof(make_initial_mesh(dom), args.scheme)
    if args.max_ndof <= initial:
        raise CliError(f"--max-ndof {args.max_ndof} does not exceed the "
                       f"initial mesh's {initial} degrees of freedom")

    try:
        out = open(args.out, "w", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}")

    with out:
        writer = csv.writer(out)
        writer.writerow(CSV_HEADER)

        def on_step(step, mesh, solution, indicators, record):
            writer.writerow(_record_row(record))
            out.flush()
            if args.dump_mesh:
                path = f"{args.dump_mesh}_step{step:03d}.txt"
                with open(path, "w") as fh:
                    mesh.dump(fh)

        result = adaptive_solve(
            problem, args.scheme, mode=args.mode, max_ndof=args.max_ndof,
            weights=args.weights, tol=args.tol,
            mark_fraction=args.mark_fraction, domain=domain,
            vd_exact=args.vd_integration == "exact", on_step=on_step)

    records = result.records
    print(f"wrote {args.out}: {len(records)} records")
    if records:
        last = records[-1]
        print(f"final ndof {last.ndof}  err_total {_fmt(last.err_total)}  "
              f"est_total {_fmt(last.est_total)}")
        eff = [r.effectivity for r in records[-3:]]
        if all(np.isfinite(e) for e in eff):
            print(f"mean effectivity (last {len(eff)}): "
                  f"{_fmt(np.mean(eff))}")
    if len(records) >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            slopes = fit_rates(args.out, ("err_total", "est_total"))
        parts = [f"{k} {slopes[k]:+.3f}" for k in slopes
                 if np.isfinite(slopes[k])]
        if parts:
            print("fitted rates vs ndof:", "  ".join(parts))
    if result.converged:
        print("stopped early: marking selected no elements")
    if result.failure is not None:
        print(f"solver failure at step {len(records)}: {result.failure}",
              file=sys.stderr)
        return 1
    return 0


def _rates(args):
    columns = [c for c in args.columns.split(",") if c]
    if not columns:
        raise CliError("no columns given")
    slopes = fit_rates(args.csv, columns)
    for name in columns:
        print(f"{name} {slopes[name]:+.6g}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparseafem",
        description="Adaptive finite elements for sparse optimal control "
                    "of the Poisson equation.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one convergence experiment")
    run.add_argument("--example", choices=("1", "2", "custom"),
                     required=True)
    run.add_argument("--scheme", choices=SCHEMES, required=True)
    run.add_argument("--mode", choices=(UNIFORM, ADAPTIVE),
                     default=ADAPTIVE)
    run.add_argument("--alpha", type=float, default=None,
                     help="control cost weight (default: example's)")
    run.add_argument("--beta", type=float, default=None,
                     help="sparsity weight (default: example's)")
    run.add_argument("--max-ndof", type=int, required=True,
                     help="stop once the recorded ndof exceeds this")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--mark-fraction", type=float, default=0.5)
    run.add_argument("--tol", type=float, default=1e-10)
    run.add_argument("--weights", type=_parse_weights,
                     default=(1.0, 1.0, 1.0, 1.0),
                     help="estimator weights w1,w2,w3,w4")
    run.add_argument("--vd-integration", choices=("exact", "quadrature"),
                     default="exact")
    run.add_argument("--dump-mesh", metavar="PREFIX", default=None,
                     help="write PREFIX_stepNNN.txt mesh files")
    run.add_argument("--domain", choices=(UNIT_SQUARE, LSHAPE),
                     default=UNIT_SQUARE, help="custom runs only")
    run.add_argument("--f-const", type=float, default=0.0,
                     help="custom runs: constant source term")
    run.add_argument("--yomega-const", type=float, default=1.0,
                     help="custom runs: constant tracking target")
    run.add_argument("--lower", type=float, default=-1.0,
                     help="custom runs: lower control bound")
    run.add_argument("--upper", type=float, default=1.0,
                     help="custom runs: upper control bound")
    run.set_defaults(func=_run)

    rates = sub.add_parser("rates", help="fit rate slopes from a run CSV")
    rates.add_argument("--csv", required=True)
    rates.add_argument("--columns", default="err_total,est_total",
                       help="comma-separated column names")
    rates.set_defaults(func=_rates)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and args.max_ndof < 100:
        parser.error("--max-ndof must be at least 100")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
