"""
Command-line front end.

    python3 cli.py solve --operator gaussian_blur:sigma=2.0,size=64x64 --stop df --ordering hyperbolic
    python3 cli.py filter --data noisy.pgm --ordering elliptic --emit-mask
    python3 cli.py experiment --config experiment.txt --out results/

Exit codes: 0 on success, 2 for bad input (missing files, malformed specs or configs), 3 when the
bidiagonalization breaks down before its first iteration.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from termcolor import colored

from config import (DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_K_MAX, DEFAULT_P, DEFAULT_TAU, ORDERINGS,
                    load_env, load_experiment_config, resolve_log_level)
from experiments import NoiseSpec, add_noise, gen_problem, run_experiment, write_results_csv, write_summary_csv
from hybrid import hybrid_run, make_selector, write_lambda_trace_csv
from image_io import (CSV_SUFFIXES, PGM_SUFFIXES, read_csv_matrix, read_data, read_pgm, write_csv_matrix, write_data,
                      write_pgm)
from operators import Blur2dOperator, DenseOperator, ShapeError, unvec, vec
from spectral_filter import centered_mask_image, filter_data_2d
from stopping import DfRule, DiscrepancyRule, LCurveRule, NcpRule, StoppingDecision, run_stopping_rules, write_trace_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BREAKDOWN = 3

STOP_METHODS = ("df", "lcurve", "ncp", "discrepancy", "wgcv")
DEFAULT_ALPHA = 1e-2

logger = logging.getLogger(__name__)


# --------------------- Inputs ---------------------

def load_operator(spec: str, boundary: str, data: Optional[np.ndarray]):
    """
    Operator from a CSV matrix, a PGM point spread function, or a problem spec.
    Returns (operator, test problem or None).
    """
    # problem specs with parameters always contain '=', e.g. gaussian_blur:image=photo.pgm
    suffix = Path(spec).suffix.lower() if "=" not in spec else ""
    if suffix in CSV_SUFFIXES:
        return DenseOperator(read_csv_matrix(spec)), None
    if suffix in PGM_SUFFIXES:
        if data is None:
            raise ValueError("A PSF operator file needs --data to fix the image size.")
        return Blur2dOperator(read_pgm(spec), data.shape, boundary), None
    problem = gen_problem(spec, size=data.shape if data is not None else None)
    return problem.A, problem


def load_inputs(args):
    """
    Operator, right-hand side and image shape for solve. Without --data the operator must be a problem
    spec and the data is its blurred image with noise level --alpha drawn from --seed.
    """
    data = read_data(args.data) if args.data else None
    A, problem = load_operator(args.operator, args.boundary, data)

    if data is None:
        if problem is None:
            raise ValueError("--data is required unless --operator names a test problem.")
        b = add_noise(problem.b_true, NoiseSpec(args.alpha, args.seed or 0))
        return A, b, problem.dims

    b = vec(data)
    if b.size != A.shape[0]:
        raise ShapeError(f"Data of shape {data.shape} does not match operator shape {A.shape}.")
    return A, b, data.shape


def make_rule(args, B: np.ndarray):
    M, N = B.shape
    if args.stop == "df":
        return DfRule.from_image(B, args.ordering, args.h, args.epsilon, args.delta, args.p)
    if args.stop == "lcurve":
        return LCurveRule(args.p)
    if args.stop == "ncp":
        return NcpRule((M, N), args.p)
    if args.noise_std is None:
        raise ValueError("--noise-std is required for --stop discrepancy.")
    return DiscrepancyRule(args.noise_std, M * N, args.tau)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warnings(decision: StoppingDecision) -> list[str]:
    warnings = []
    if decision.flags.get("picard_detected") is False:
        warnings.append("Picard parameter not detected, all Fourier coefficients were kept.")
    if decision.flags.get("low_confidence"):
        warnings.append("L-curve corner is low confidence.")
    if decision.flags.get("degenerate"):
        warnings.append("Residual periodogram was degenerate.")
    if decision.reason == "max-iter":
        warnings.append("Reached --max-iter before the stopping rule triggered.")
    return warnings


# --------------------- Subcommands ---------------------

def solve(args) -> int:
    A, b, dims = load_inputs(args)
    M, N = dims
    k_max = min(args.max_iter, *A.shape)
    out = _out_dir(args.out)

    if args.stop == "wgcv":
        run = hybrid_run(A, b, k_max, make_selector("wgcv"))
        fac = run.fac
        if fac.breakdown and fac.k == 0:
            print(colored("Bidiagonalization broke down before the first iteration (A^T b = 0).", "red"),
                  file=sys.stderr)
            return EXIT_BREAKDOWN
        k = run.stop_iteration
        decision = StoppingDecision("wgcv", k, k, run.reason, [(j, lam) for j, lam, _, _ in run.trace],
                                    {"lambda": run.lambdas.get(k), "flags": run.flags})
        x = run.solution
        write_lambda_trace_csv(out / "trace.csv", run)
    else:
        rule = make_rule(args, unvec(b, M, N))
        run = run_stopping_rules(A, b, [rule], k_max)
        fac = run.fac
        if fac.breakdown and fac.k == 0:
            print(colored("Bidiagonalization broke down before the first iteration (A^T b = 0).", "red"),
                  file=sys.stderr)
            return EXIT_BREAKDOWN
        decision = run.decisions[rule.name]
        x = run.solution(rule.name)
        write_trace_csv(out / "trace.csv", decision)

    X = unvec(x, M, N) if x.size == M * N else x
    write_csv_matrix(out / "solution.csv", X)
    if X.ndim == 2 and min(X.shape) > 1:
        write_pgm(out / "solution.pgm", X)
    with open(out / "decision.json", "w") as f:
        json.dump(decision.to_dict(), f, indent=2, default=str)

    print(colored(f"{decision.method}: stopped at k={decision.stop_iteration}, "
                  f"selected k={decision.selected_iteration} ({decision.reason})", "green"))
    for warning in _warnings(decision):
        print(colored(warning, "yellow"))
    print(f"Wrote {out / 'solution.csv'}, {out / 'decision.json'} and {out / 'trace.csv'}")
    return EXIT_OK


def filter_command(args) -> int:
    data = read_data(args.data)
    result = filter_data_2d(data, args.ordering, args.h, args.epsilon, args.k0)
    out = _out_dir(args.out)

    suffix = ".pgm" if Path(args.data).suffix.lower() in PGM_SUFFIXES else ".csv"
    filtered_path = out / f"filtered{suffix}"
    write_data(filtered_path, result.filtered)

    estimate = result.estimate
    report = {
        "ordering": args.ordering,
        "m": int(data.size),
        "h": estimate.h,
        "epsilon": estimate.eps,
        "k0": estimate.k0,
        "detected": estimate.detected,
        "noise_variance_estimate": estimate.noise_variance_estimate,
        "retained": int(result.mask.sum()),
    }
    with open(out / "filter_report.json", "w") as f:
        json.dump(report, f, indent=2)
    if args.emit_mask:
        write_pgm(out / "mask.pgm", centered_mask_image(result.mask))

    color = "green" if estimate.detected else "yellow"
    print(colored(f"{args.ordering}: k0={estimate.k0}, V(k0)={estimate.noise_variance_estimate:.4e}, "
                  f"retained {report['retained']} of {report['m']}", color))
    print(f"Wrote {filtered_path} and {out / 'filter_report.json'}")
    return EXIT_OK


def experiment(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers

    records = run_experiment(config)
    out = _out_dir(args.out)
    write_results_csv(out / "results.csv", records)
    write_summary_csv(out / "summary.csv", records)

    failed = sum(1 for r in records if r.stop_iteration < 0)
    if failed:
        print(colored(f"{failed} of {len(records)} runs failed, see the log.", "yellow"))
    print(colored(f"Wrote {len(records)} records to {out / 'results.csv'}", "green"))
    return EXIT_OK


# --------------------- Parser ---------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG logging.")
    common.add_argument("--seed", type=int, default=None, help="Noise seed (solve) or master seed (experiment).")
    common.add_argument("--out", default="out", help="Output directory.")

    parser = argparse.ArgumentParser(description="Iterative regularization with data-filtered stopping rules.")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("solve", parents=[common], formatter_class=fmt,
                       help="Solve a problem with one stopping rule.")
    p.add_argument("--operator", required=True,
                   help="Problem spec (e.g. gaussian_blur:sigma=2.0,size=64x64), a .csv matrix or a .pgm PSF.")
    p.add_argument("--boundary", choices=("zero", "periodic"), default="zero", help="Boundary for a .pgm PSF.")
    p.add_argument("--data", help="Noisy data as .pgm or .csv. Synthesized from the problem spec when omitted.")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Noise level for synthesized data.")
    p.add_argument("--stop", choices=STOP_METHODS, default="df", help="Stopping rule.")
    p.add_argument("--ordering", choices=ORDERINGS, default="hyperbolic", help="Fourier ordering for df.")
    p.add_argument("--max-iter", type=int, default=DEFAULT_K_MAX, help="Maximum number of iterations.")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="Relative decrease threshold for df.")
    p.add_argument("--p", type=int, default=DEFAULT_P, help="Consecutive iterations before stopping.")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="Picard leveling-off tolerance.")
    p.add_argument("--h", type=int, default=None, help="Picard look-ahead step; ceil(m/100) when omitted.")
    p.add_argument("--noise-std", type=float, default=None, help="Noise standard deviation for discrepancy.")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="Safety factor for discrepancy.")
    p.set_defaults(handler=solve)

    p = sub.add_parser("filter", parents=[common], formatter_class=fmt,
                       help="Filter noisy data in the Fourier basis.")
    p.add_argument("--data", required=True, help="Noisy data as .pgm or .csv.")
    p.add_argument("--ordering", choices=ORDERINGS, default="hyperbolic", help="Fourier ordering.")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="Picard leveling-off tolerance.")
    p.add_argument("--h", type=int, default=None, help="Picard look-ahead step; ceil(m/100) when omitted.")
    p.add_argument("--k0", type=int, default=None, help="Force the Picard parameter instead of detecting it.")
    p.add_argument("--emit-mask", action="store_true", help="Also write the retained-frequency mask as PGM.")
    p.set_defaults(handler=filter_command)

    p = sub.add_parser("experiment", parents=[common], formatter_class=fmt,
                       help="Run the stopping-rule comparison.")
    p.add_argument("--config", required=True, help="Experiment config file (key = value lines).")
    p.add_argument("--workers", type=int, default=None, help="Worker threads; overrides config and env.json.")
    p.set_defaults(handler=experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        logging.basicConfig(level=resolve_log_level(args.verbose, load_env()),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.handler(args)
    except (ValueError, OSError) as e:
        print(colored(f"Error: {e}", "red"), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
