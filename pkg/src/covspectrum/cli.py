"""Command-line harness.

Subcommands: gen, spectrum, esd, covtest, moments, sweep, report.
Exit codes: 0 success, 1 validation error, 2 resource/convergence error,
3 I/O error.  The output directory comes from --out, falling back to the
COVSPECTRUM_OUT environment variable, then the current directory.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .ensemble import (
    MatrixShape,
    SeedSpec,
    distribution_from_json,
    load_matrix,
    matrix_to_csv,
    sample_matrix,
    save_matrix,
)
from .errors import ConvergenceError, ResourceError, ValidationError
from .harness import ExperimentConfig, fit_rate, run_experiment, summarize
from .momentlab import (
    bound_rhs_a13,
    check_schedule,
    circuit_from_json_str,
    classify_json,
    exact_trace_moment,
)
from .ensemble import moment_sequence
from .normalize import build_S1, build_S2, covariance_from_json
from .reports import emit_report, read_records, records_to_csv, summary_to_csv
from .spectral import eigvals_sym, spectral_summary, spectrum_to_csv
from .normalize import build_A

OUT_ENV_VAR = "COVSPECTRUM_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _json_arg(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid {what} JSON: {exc}") from exc


def _dist_arg(text: str):
    if text.lstrip().startswith("{"):
        return distribution_from_json(_json_arg(text, "distribution"))
    return distribution_from_json(text)


def _out_dir(args) -> str:
    if args.out is not None:
        return args.out
    return os.environ.get(OUT_ENV_VAR, ".")


def build_parser() -> _Parser:
    parser = _Parser(prog="covspectrum", description=__doc__)
    parser.add_argument("--version", action="version", version=f"covspectrum {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, fmt_choices=("csv", "json", "svg"), fmt_default="csv"):
        sp.add_argument("--seed", type=int, default=0, help="64-bit master seed")
        sp.add_argument("--threads", type=int, default=0, help="worker threads (0 = auto)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--format", default=fmt_default, choices=fmt_choices)

    sp = sub.add_parser("gen", help="sample a data matrix and write it to a file")
    sp.add_argument("--dist", required=True, help="kind name or JSON spec")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--replicate", type=int, default=0)
    sp.add_argument("--name", default=None, help="output file name (default derived)")
    add_common(sp, fmt_choices=("bin", "csv"), fmt_default="bin")

    sp = sub.add_parser("spectrum", help="largest eigenvalue of one matrix, dense or matrix-free")
    sp.add_argument("--in", dest="infile", required=True, help="matrix file from gen")
    sp.add_argument("--method", default="dense", choices=("dense", "matfree"))
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=20000)
    add_common(sp)

    sp = sub.add_parser("esd", help="full spectrum plus KS distance to the semicircle law")
    sp.add_argument("--in", dest="infile", required=True)
    add_common(sp)

    sp = sub.add_parser("covtest", help="operator-norm error of S2 against a population Sigma")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--sigma", required=True, help="covariance JSON spec")
    add_common(sp)

    sp = sub.add_parser("moments", help="combinatorial oracles: classify, exact, bound")
    sp.add_argument("mode", choices=("classify", "exact", "bound", "schedule"))
    sp.add_argument("--circuit", default=None, help="circuit JSON for classify")
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--c1", type=float, default=2.0)
    sp.add_argument("--dist", default="rademacher", help="moments source for exact")
    add_common(sp)

    sp = sub.add_parser("sweep", help="run an ExperimentConfig JSON")
    sp.add_argument("--config", required=True)
    add_common(sp)

    sp = sub.add_parser("report", help="summaries and plots from a records CSV")
    sp.add_argument("--records", required=True)
    add_common(sp)

    return parser


def _cmd_gen(args) -> int:
    spec = _dist_arg(args.dist)
    X = sample_matrix(spec, MatrixShape(args.p, args.n), SeedSpec(args.seed), args.replicate)
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    name = args.name or f"matrix_p{args.p}_n{args.n}_r{args.replicate}"
    if args.format == "csv":
        path = os.path.join(out_dir, name + ".csv")
        matrix_to_csv(X, path)
    else:
        path = os.path.join(out_dir, name + ".bin")
        save_matrix(X, path)
    print(path)
    return 0


def _cmd_spectrum(args) -> int:
    X = load_matrix(args.infile)
    summary = spectral_summary(X, method=args.method, tol=args.tol)
    out = {
        "p": X.p,
        "n": X.n,
        "method": summary.method,
        "lambda_max": summary.lambda_max,
        "diag_max_dev": summary.diag_max_dev,
    }
    if summary.ks_to_semicircle is not None:
        out["ks_to_semicircle"] = summary.ks_to_semicircle
    print(json.dumps(out, sort_keys=True))
    return 0


def _cmd_esd(args) -> int:
    X = load_matrix(args.infile)
    summary = spectral_summary(X, method="dense")
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "spectrum.csv")
    spectrum_to_csv(summary.eigenvalues, path)
    print(
        json.dumps(
            {
                "spectrum_csv": path,
                "lambda_max": summary.lambda_max,
                "ks_to_semicircle": summary.ks_to_semicircle,
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_covtest(args) -> int:
    X = load_matrix(args.infile)
    sigma_spec = covariance_from_json(_json_arg(args.sigma, "covariance"))
    sigma = sigma_spec.materialize(X.p)
    err = float(np.abs(eigvals_sym(build_S2(X, sigma_spec) - sigma)).max())
    sigma_norm = float(np.abs(eigvals_sym(sigma)).max())
    s1_dev = float(np.abs(eigvals_sym(build_S1(X) - np.eye(X.p))).max())
    print(
        json.dumps(
            {
                "norm_error": err,
                "factorized_bound": s1_dev * sigma_norm,
                "sigma_norm": sigma_norm,
                "within_bound": err <= s1_dev * sigma_norm + 1e-10,
            },
            sort_keys=True,
        )
    )
    return 0


def _require(args, *names) -> None:
    missing = [name for name in names if getattr(args, name) is None]
    if missing:
        raise ValidationError(f"moments {args.mode} requires --{', --'.join(missing)}")


def _cmd_moments(args) -> int:
    if args.mode == "classify":
        _require(args, "circuit")
        print(json.dumps(classify_json(circuit_from_json_str(args.circuit)), sort_keys=True))
        return 0
    if args.mode == "exact":
        _require(args, "p", "n", "k")
        moments = moment_sequence(_dist_arg(args.dist), 2 * args.k)
        value = exact_trace_moment(args.p, args.n, args.k, moments)
        print(json.dumps({"p": args.p, "n": args.n, "k": args.k, "exact": value}, sort_keys=True))
        return 0
    if args.mode == "bound":
        _require(args, "p", "n", "k", "delta")
        value = bound_rhs_a13(args.p, args.n, args.k, args.delta)
        print(
            json.dumps(
                {"p": args.p, "n": args.n, "k": args.k, "delta": args.delta, "bound": value},
                sort_keys=True,
            )
        )
        return 0
    _require(args, "p", "delta")
    report = check_schedule(args.p, args.n if args.n is not None else 1, args.delta, C1=args.c1)
    print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        obj = json.load(fh)
    if args.seed:
        obj["master_seed"] = args.seed
    config = ExperimentConfig.from_json(obj)
    out_dir = args.out if args.out is not None else os.environ.get(OUT_ENV_VAR, config.output_dir)
    if out_dir is None:
        out_dir = "."
    records = run_experiment(config, threads=args.threads, out_dir=out_dir)
    failed = sum(1 for r in records if r.failed)
    print(
        json.dumps(
            {
                "records": len(records),
                "failed": failed,
                "records_csv": os.path.join(out_dir, "records.csv"),
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_report(args) -> int:
    records = read_records(args.records)
    out_dir = _out_dir(args)
    paths = emit_report(records, args.format, out_dir)
    ratios = {(r.p, r.n) for r in records if r.task == "cov_rate"}
    if len({p / n for p, n in ratios}) >= 3:
        fit = fit_rate(records)
        print(json.dumps({"paths": paths, "rate_slope": fit.slope, "rate_r2": fit.r2}, sort_keys=True))
    else:
        print(json.dumps({"paths": paths}, sort_keys=True))
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "spectrum": _cmd_spectrum,
    "esd": _cmd_esd,
    "covtest": _cmd_covtest,
    "moments": _cmd_moments,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ResourceError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
