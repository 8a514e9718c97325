"""Command-line front end: ``rials {run,sweep,rank-r,diagnose,rip}``.

Exit status is 0 on success, 1 on invalid input and 2 when the solver fails
(partial artifacts are written first). Every output file starts with ``#``
comment lines recording the invocation, master seed and library version.
"""

from __future__ import annotations

import argparse
import shlex
import sys
import warnings
from pathlib import Path

from . import __version__
from .als import StopRule
from .diagnostics import DiagConfig, DiagRow, diagnose, estimate_rip, write_diag_csv
from .errors import RialsError, SolverFailure
from .experiments import (
    DESK_NS,
    DESK_OVERSAMPLINGS,
    ExperimentConfig,
    default_jobs,
    run_rank_r_trajectory,
    run_sweep,
    run_trajectory,
)
from .plots import emit_plots
from .rand_stream import Lane, StreamKey, derive_trial_id
from .sensing import DEFAULT_MEMORY_BUDGET, ProblemDims, build_operator

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

# flags that change where or how fast outputs are produced, not what they contain
_NON_SEMANTIC = {"--jobs", "--out-dir"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _csv_floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _csv_ints(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_problem(p, n_default=64, rank=False, os_default=3.0):
    p.add_argument("--n1", type=int, default=n_default, help="rows of X* (default: %(default)s)")
    p.add_argument("--n2", type=int, default=None, help="columns of X* (default: same as --n1)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--m", type=int, default=None, help="number of measurements (default: from --oversampling)")
    g.add_argument("--oversampling", type=float, default=None,
                   help=f"m divided by the degrees of freedom (default: {os_default})")
    if rank:
        p.add_argument("--rank", type=int, default=5, help="target rank r (default: %(default)s)")
    p.set_defaults(os_default=os_default)


def _add_common(p, init=True):
    if init:
        p.add_argument("--init", choices=("random", "spectral"), default="random",
                       help="starting point (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration cap (default: 10 (ln n2 + ln 1e8) / ln ln n2)")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="stop when the relative residual falls below this (default: %(default)s)")
    p.add_argument("--out-dir", default=".", help="output directory (default: current directory)")
    p.add_argument("--phase-c", type=float, default=1.0,
                   help="phase 2 starts once cos(theta_v) >= c / ln n2 (default: %(default)s)")
    p.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET,
                   help="bytes allowed for a dense operator before streaming (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rials", description="Randomly initialized alternating least squares for matrix sensing.")
    parser.add_argument("--version", action="version", version=f"rials {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{run,sweep,rank-r,diagnose,rip}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="one logged rank-one trajectory (CSV + SVG)")
    _add_problem(p)
    _add_common(p)
    p.add_argument("--angle-tol", type=float, default=0.0,
                   help="also stop once max(sin theta_u, sin theta_v) is below this (default: off)")

    p = sub.add_parser("sweep", help="phase-transition sweep over n and oversampling")
    p.add_argument("--ns", type=_csv_ints, default=DESK_NS, help="comma-separated n values (default: 8,16,32,64)")
    p.add_argument("--oversamplings", type=_csv_floats, default=DESK_OVERSAMPLINGS,
                   help="comma-separated oversampling factors (default: 1.0,1.25,...,3.0)")
    p.add_argument("--trials", type=int, default=50, help="trials per cell (default: %(default)s)")
    p.add_argument("--init", choices=("random", "spectral", "both"), default="both",
                   help="starting point(s) (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration cap (default: 10 (ln n + ln 1e8) / ln ln n)")
    p.add_argument("--tol", type=float, default=1e-10, help="relative residual stopping tolerance (default: %(default)s)")
    p.add_argument("--success-threshold", type=float, default=1e-4,
                   help="relative error counted as recovery (default: %(default)s)")
    p.add_argument("--out-dir", default=".", help="output directory (default: current directory)")
    p.add_argument("--phase-c", type=float, default=1.0, help="phase boundary constant (default: %(default)s)")
    p.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET,
                   help="bytes allowed for a dense operator (default: %(default)s)")
    p.add_argument("--full", action="store_true",
                   help="full-scale grid: n up to 256, 100 trials (slow; default: off)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")

    p = sub.add_parser("rank-r", help="one logged rank-r trajectory with principal-angle metrics")
    _add_problem(p, rank=True, os_default=2.0)
    _add_common(p)
    p.add_argument("--angle-tol", type=float, default=0.0, help="principal-angle stopping tolerance (default: off)")

    p = sub.add_parser("diagnose", help="coupled auxiliary run and inequality checks (canonical frame)")
    _add_problem(p, n_default=32, os_default=8.0)
    _add_common(p, init=False)
    p.add_argument("--trial", type=int, default=0, help="trial index under the master seed (default: %(default)s)")
    p.add_argument("--horizon", type=int, default=8, help="horizon T of the concentration checks (default: %(default)s)")
    p.add_argument("--eta", type=float, default=64.0, help="confidence parameter eta (default: %(default)s)")
    p.add_argument("--constant", type=float, default=10.0,
                   help="multiplier standing in for unstated absolute constants (default: %(default)s)")
    p.add_argument("--rip-samples", type=int, default=200, help="RIP probe matrices (default: %(default)s)")

    p = sub.add_parser("rip", help="sampled restricted-isometry distortion of one operator")
    _add_problem(p, n_default=32, os_default=8.0)
    p.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    p.add_argument("--samples", type=int, default=200, help="probe matrices (default: %(default)s)")
    p.add_argument("--probe-rank", type=int, default=4, help="rank of the probe matrices (default: %(default)s)")
    p.add_argument("--canonical", action="store_true", help="also report the D/O split checks (default: off)")
    p.add_argument("--out-dir", default=".", help="output directory (default: current directory)")
    p.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET,
                   help="bytes allowed for a dense operator (default: %(default)s)")
    return parser


def _header(argv, seed, extra=()):
    kept = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        name = tok.split("=", 1)[0]
        if name in _NON_SEMANTIC:
            skip = "=" not in tok
            continue
        kept.append(tok)
    lines = [f"invocation: rials {shlex.join(kept)}", f"seed: {seed}", f"version: rials {__version__}"]
    return lines + list(extra)


def _validate(args):
    def positive(flag, value):
        if value is not None and value < 1:
            raise UsageError(f"{flag} must be >= 1, got {value}")

    for flag in ("n1", "n2", "m", "rank", "max_iters", "trials", "samples", "rip_samples", "probe_rank", "horizon",
                 "jobs"):
        if hasattr(args, flag):
            positive("--" + flag.replace("_", "-"), getattr(args, flag))
    if getattr(args, "oversampling", None) is not None and not args.oversampling > 0:
        raise UsageError(f"--oversampling must be > 0, got {args.oversampling}")
    if getattr(args, "tol", 0.0) < 0:
        raise UsageError(f"--tol must be >= 0, got {args.tol}")
    if getattr(args, "success_threshold", 1.0) <= 0:
        raise UsageError("--success-threshold must be > 0")
    if hasattr(args, "phase_c") and not args.phase_c > 0:
        raise UsageError("--phase-c must be > 0")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must lie in [0, 2**64)")
    if getattr(args, "memory_budget", 1) < 0:
        raise UsageError("--memory-budget must be >= 0")
    if hasattr(args, "ns") and (not args.ns or min(args.ns) < 1):
        raise UsageError("--ns must list positive integers")
    if hasattr(args, "oversamplings") and (not args.oversamplings or min(args.oversamplings) <= 0):
        raise UsageError("--oversamplings must list positive numbers")
    if hasattr(args, "n1"):
        n2 = args.n2 if args.n2 is not None else args.n1
        r = getattr(args, "rank", 1)
        if r > min(args.n1, n2):
            raise UsageError(f"--rank {r} exceeds min(n1, n2) = {min(args.n1, n2)}")
    if hasattr(args, "eta") and not args.eta > 1:
        raise UsageError("--eta must exceed 1")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"--out-dir {out} is not writable: {exc}")
    if not out.is_dir():
        raise UsageError(f"--out-dir {out} is not a directory")


def _single_cfg(args, rank=1):
    n2 = args.n2 if args.n2 is not None else args.n1
    oversampling = args.oversampling if args.oversampling is not None else args.os_default
    return ExperimentConfig(
        ns=(args.n1,), oversamplings=(oversampling,), trials=1, inits=(args.init,), rank=rank,
        master_seed=args.seed, max_iters=args.max_iters, residual_tol=args.tol,
        angle_tol=getattr(args, "angle_tol", 0.0), phase_c=args.phase_c, memory_budget=args.memory_budget,
        m=args.m, n2=n2 if n2 != args.n1 else None,
    )


def _dims(args):
    n2 = args.n2 if args.n2 is not None else args.n1
    if args.m is not None:
        m = args.m
    else:
        os_ = args.oversampling if args.oversampling is not None else args.os_default
        m = max(1, int(round(os_ * (args.n1 + n2))))
    return ProblemDims(args.n1, n2, m)


def _cmd_run(args, argv, rank=1):
    cfg = _single_cfg(args, rank)
    m = cfg.m_for(cfg.ns[0], cfg.oversamplings[0])
    header = _header(argv, args.seed, [f"problem: n1={args.n1} n2={cfg.shape(args.n1)[1]} m={m} rank={rank}"])
    runner = run_trajectory if rank == 1 else run_rank_r_trajectory
    try:
        result = runner(cfg, args.out_dir, header_lines=header)
    except SolverFailure as exc:
        print(f"rials: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    last = result.trajectory.records[-1]
    print(f"iterations={last.t} rel_error={result.rel_error:.3e} sin_v={last.sin_v:.3e}")
    for p in result.paths:
        print(p)
    return EXIT_OK


def _cmd_sweep(args, argv):
    inits = ("random", "spectral") if args.init == "both" else (args.init,)
    kw = dict(oversamplings=args.oversamplings, inits=inits, master_seed=args.seed, max_iters=args.max_iters,
              residual_tol=args.tol, success_threshold=args.success_threshold, phase_c=args.phase_c,
              memory_budget=args.memory_budget)
    argv_has = {tok.split("=", 1)[0] for tok in argv}
    if args.full:
        if "--ns" in argv_has:
            kw["ns"] = args.ns
        if "--trials" in argv_has:
            kw["trials"] = args.trials
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = ExperimentConfig.full(**kw)
        for w in caught:
            print(f"rials: warning: {w.message}", file=sys.stderr)
    else:
        cfg = ExperimentConfig(ns=args.ns, trials=args.trials, **kw)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    result = run_sweep(cfg, jobs=jobs)
    header = _header(argv, args.seed)
    out = Path(args.out_dir)
    paths = [out / "sweep_trials.csv", out / "sweep_aggregate.csv"]
    paths[0].write_text(result.trials_csv(header))
    paths[1].write_text(result.aggregate_csv(header))
    for init in inits:
        path = out / f"sweep_{init}.svg"
        emit_plots(result.heatmap(init), "heatmap", path)
        paths.append(path)
    for c in result.cells:
        print(f"n={c.n} os={c.oversampling:g} init={c.init} success={c.success_frac:.2f} "
              f"median_error={c.median_error:.2e}")
    for p in paths:
        print(p)
    return EXIT_OK


def _cmd_diagnose(args, argv):
    dims = _dims(args)
    cfg = DiagConfig(horizon=args.horizon, eta=args.eta, rip_samples=args.rip_samples, constant=args.constant)
    if args.max_iters:
        stop = StopRule(args.max_iters, residual_tol=args.tol)
    else:
        stop = StopRule.default(dims.n2, residual_tol=args.tol)
    report = diagnose(dims, args.seed, args.trial, cfg, stop, args.phase_c, args.memory_budget)
    header = _header(argv, args.seed, [
        f"problem: n1={dims.n1} n2={dims.n2} m={dims.m}",
        "frame: canonical (u* = e1, v* = e1), forced for diagnostics",
        f"coupling: status={report.coupling.status} aux_status={report.coupling.aux_status}",
    ])
    path = Path(args.out_dir) / f"diagnose_{args.seed}.csv"
    with open(path, "w", newline="") as fh:
        write_diag_csv(report.rows, fh, header)
    print(f"delta_hat={report.rip.delta_hat:.4f} phase1_closeness={'ok' if report.coupling.phase1_satisfied() else 'violated'}")
    print(path)
    if report.coupling.status != "ok":
        print(f"rials: solver failure in coupled run: {report.coupling.status}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_rip(args, argv):
    dims = _dims(args)
    tid = derive_trial_id(args.seed, 0)
    op = build_operator(dims, StreamKey(args.seed, Lane.MEASUREMENT, tid), memory_budget=args.memory_budget,
                        canonical=args.canonical)
    est = estimate_rip(op, args.samples, StreamKey(args.seed, Lane.TRIAL, tid), rank=args.probe_rank)
    header = _header(argv, args.seed, [f"problem: n1={dims.n1} n2={dims.n2} m={dims.m}",
                                       "delta_hat is a sampled lower estimate, not a certificate"])
    rows = [DiagRow(s, "rip_distortion", float(d), est.delta_hat, None) for s, d in enumerate(est.distortions)]
    rows.append(DiagRow(0, "rip_delta_hat", est.delta_hat, 1.0, est.delta_hat < 1.0))
    rows += est.split_rows
    path = Path(args.out_dir) / f"rip_{args.seed}.csv"
    with open(path, "w", newline="") as fh:
        write_diag_csv(rows, fh, header)
    print(f"delta_hat={est.delta_hat:.6f} over {est.sample_count} rank-{est.max_rank_tested} probes")
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _validate(args)
        if args.command == "run":
            return _cmd_run(args, argv)
        if args.command == "rank-r":
            return _cmd_run(args, argv, rank=args.rank)
        if args.command == "sweep":
            return _cmd_sweep(args, argv)
        if args.command == "diagnose":
            return _cmd_diagnose(args, argv)
        return _cmd_rip(args, argv)
    except UsageError as exc:
        print(f"rials: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverFailure as exc:
        print(f"rials: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RialsError as exc:
        print(f"rials: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
