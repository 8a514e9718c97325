"""Monte-Carlo harness: single trajectories, phase-transition sweeps, rank-r runs.

Every trial is addressed by ``(n, oversampling index, trial index)``. That
triple is hashed into a stream trial id, so a trial's operator, ground truth
and starting point do not depend on the rest of the grid or on which worker
ran it. Random and spectral runs of the same cell share operator and truth.
"""

from __future__ import annotations

import io
import math
import os
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import als
from .diagnostics import isotropic_oracle
from .errors import DegenerateObservation, InvalidDimension, InvalidParameters, SolverFailure
from .initialization import random_init, random_init_block, spectral_init, spectral_init_block
from .plots import emit_plots
from .rand_stream import Lane, StreamKey, derive_trial_id, gaussian_grid, sphere_sample
from .sensing import DEFAULT_MEMORY_BUDGET, ProblemDims, build_operator

__all__ = [
    "ExperimentConfig",
    "TrialResult",
    "CellSummary",
    "SweepResult",
    "DESK_NS",
    "DESK_OVERSAMPLINGS",
    "FULL_NS",
    "run_trial",
    "run_trajectory",
    "run_rank_r_trajectory",
    "run_sweep",
    "trial_problem",
    "SWEEP_HEADER",
    "AGGREGATE_HEADER",
]

DESK_NS = (8, 16, 32, 64)
DESK_OVERSAMPLINGS = tuple(1.0 + 0.25 * k for k in range(9))
FULL_NS = (8, 16, 32, 64, 128, 256)
FULL_TRIALS = 100

SWEEP_HEADER = "n,oversampling,m,init,trial,seed,rel_error,iters,status"
AGGREGATE_HEADER = "n,oversampling,m,init,median_error,success_frac,median_iters"

# trial-lane rows holding the ground truth factors
TRUTH_U, TRUTH_V, TRUTH_U_BLOCK, TRUTH_V_BLOCK = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    ns: tuple = DESK_NS
    oversamplings: tuple = DESK_OVERSAMPLINGS
    trials: int = 50
    inits: tuple = ("random",)
    rank: int = 1
    master_seed: int = 0
    # None -> StopRule.default(n)
    max_iters: int | None = None
    residual_tol: float = 1e-10
    angle_tol: float = 0.0
    success_threshold: float = 1e-4
    phase_c: float = 1.0
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    # explicit m and non-square n2 are only valid for single-cell runs
    m: int | None = None
    n2: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "oversamplings", tuple(float(o) for o in self.oversamplings))
        object.__setattr__(self, "inits", tuple(self.inits))
        if self.trials < 1:
            raise InvalidParameters("trials must be >= 1")
        if not self.ns or not self.oversamplings or not self.inits:
            raise InvalidParameters("grids must be nonempty")
        if not self.success_threshold > 0:
            raise InvalidParameters("success threshold must be > 0")
        if any(o <= 0 for o in self.oversamplings):
            raise InvalidParameters("oversampling factors must be positive")
        if self.rank < 1:
            raise InvalidDimension("rank must be >= 1")
        for kind in self.inits:
            if kind not in ("random", "spectral"):
                raise InvalidParameters(f"unknown init kind {kind!r}")
        if (self.m is not None or self.n2 is not None) and (len(self.ns) != 1 or len(self.oversamplings) != 1):
            raise InvalidParameters("explicit m or n2 is only valid for a single-cell config")
        for n in self.ns:
            if n < 1 or (self.n2 is not None and self.n2 < 1):
                raise InvalidDimension("matrix dimensions must be >= 1")
            if self.rank > min(n, self.n2 or n):
                raise InvalidDimension(f"rank {self.rank} exceeds min(n1, n2) = {min(n, self.n2 or n)}")

    @classmethod
    def desk(cls, **kw) -> "ExperimentConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "ExperimentConfig":
        warnings.warn("full grid (n up to 256, 100 trials per cell) takes hours on one core", RuntimeWarning,
                      stacklevel=2)
        kw.setdefault("ns", FULL_NS)
        kw.setdefault("trials", FULL_TRIALS)
        return cls(**kw)

    def shape(self, n: int) -> tuple[int, int]:
        return n, (self.n2 if self.n2 is not None else n)

    def dof(self, n: int) -> int:
        n1, n2 = self.shape(n)
        r = self.rank
        return n1 + n2 if r == 1 else r * (n1 + n2 - r)

    def m_for(self, n: int, oversampling: float) -> int:
        if self.m is not None:
            return self.m
        return max(1, int(round(oversampling * self.dof(n))))

    def stop_rule(self, n: int) -> als.StopRule:
        if self.max_iters is None:
            return als.StopRule.default(self.shape(n)[1], residual_tol=self.residual_tol, angle_tol=self.angle_tol)
        return als.StopRule(self.max_iters, residual_tol=self.residual_tol, angle_tol=self.angle_tol)


@dataclass(frozen=True)
class TrialResult:
    n: int
    oversampling: float
    m: int
    init: str
    trial: int
    seed: int
    rel_error: float
    # iterations to reach the success threshold, or iterations run if it was never reached
    iters: int
    status: str

    @property
    def key(self):
        return (self.n, self.oversampling, self.init, self.trial)

    def csv_row(self) -> str:
        return (f"{self.n},{self.oversampling:g},{self.m},{self.init},{self.trial},{self.seed},"
                f"{self.rel_error!r},{self.iters},{self.status}")


@dataclass(frozen=True)
class CellSummary:
    n: int
    oversampling: float
    m: int
    init: str
    median_error: float
    success_frac: float
    median_iters: float

    def csv_row(self) -> str:
        return (f"{self.n},{self.oversampling:g},{self.m},{self.init},{self.median_error!r},"
                f"{self.success_frac!r},{self.median_iters!r}")


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    cells: list = field(default_factory=list)

    def cell(self, n: int, oversampling: float, init: str) -> CellSummary:
        for c in self.cells:
            if c.n == n and c.init == init and math.isclose(c.oversampling, oversampling):
                return c
        raise KeyError((n, oversampling, init))

    def trials_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(SWEEP_HEADER + "\n")
        for r in self.rows:
            buf.write(r.csv_row() + "\n")
        return buf.getvalue()

    def aggregate_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(AGGREGATE_HEADER + "\n")
        for c in self.cells:
            buf.write(c.csv_row() + "\n")
        return buf.getvalue()

    def heatmap(self, init: str) -> dict:
        """Median error per (n, oversampling) cell, rows ordered by n."""
        cfg = self.config
        values = [[self.cell(n, o, init).median_error for o in cfg.oversamplings] for n in cfg.ns]
        return {"x": list(cfg.oversamplings), "y": list(cfg.ns), "values": values,
                "xlabel": "oversampling", "ylabel": "n", "title": f"median relative error ({init} init)"}


# -- single trial ---------------------------------------------------------------

def trial_problem(cfg: ExperimentConfig, n: int, os_index: int, trial_index: int):
    """Operator, truth pair, measurements and stream key of one grid trial."""
    m = cfg.m_for(n, cfg.oversamplings[os_index])
    n1, n2 = cfg.shape(n)
    dims = ProblemDims(n1, n2, m, rank=cfg.rank)
    tid = derive_trial_id(cfg.master_seed, n, os_index, trial_index)
    key = StreamKey(cfg.master_seed, Lane.MEASUREMENT, tid)
    op = build_operator(dims, key, memory_budget=cfg.memory_budget)
    if cfg.rank == 1:
        u_star = sphere_sample(StreamKey(cfg.master_seed, Lane.TRIAL, tid, TRUTH_U), n1)
        v_star = sphere_sample(StreamKey(cfg.master_seed, Lane.TRIAL, tid, TRUTH_V), n2)
        y = op.forward_rank1(u_star, v_star)
    else:
        r = np.arange(cfg.rank)
        u_star = gaussian_grid(cfg.master_seed, Lane.TRIAL, tid, [TRUTH_U_BLOCK], r, n1)[0].T
        v_star = gaussian_grid(cfg.master_seed, Lane.TRIAL, tid, [TRUTH_V_BLOCK], r, n2)[0].T
        y = op.forward(u_star @ v_star.T)
    return op, (u_star, v_star), y, key


def _start(cfg: ExperimentConfig, op, y, key, init: str):
    if cfg.rank == 1:
        if init == "random":
            return random_init(op.dims, key)
        return spectral_init(op, y, seed=key).v0
    if init == "random":
        return random_init_block(op.dims, key, cfg.rank)
    return spectral_init_block(op, y, cfg.rank, seed=key)


def _solve(cfg, op, y, v0, truth):
    runner = als.als_run if cfg.rank == 1 else als.als_run_rank_r
    return runner(op, y, v0, stop=cfg.stop_rule(op.dims.n2), truth=truth, phase_c=cfg.phase_c)


def _iters_to(traj: als.Trajectory, threshold: float) -> int:
    for t, e in enumerate(traj.rel_errors, start=1):
        if e <= threshold:
            return t
    return len(traj.rel_errors)


def _attempt(cfg, op, truth, y, key, init, base) -> TrialResult:
    try:
        v0 = _start(cfg, op, y, key, init)
        state, traj = _solve(cfg, op, y, v0, truth)
    except SolverFailure as exc:
        traj = getattr(exc, "trajectory", None)
        iters = len(traj.rel_errors) if traj is not None else 0
        return TrialResult(rel_error=1.0, iters=iters, status=type(exc).__name__, init=init, **base)
    except DegenerateObservation:
        return TrialResult(rel_error=1.0, iters=0, status="DegenerateObservation", init=init, **base)
    _, err = als.reconstruct(state, truth)
    status = "ok" if err <= cfg.success_threshold else "not_converged"
    return TrialResult(rel_error=err, iters=_iters_to(traj, cfg.success_threshold), status=status, init=init,
                       **base)


def run_trial(cfg: ExperimentConfig, n: int, os_index: int, trial_index: int, inits=None) -> list[TrialResult]:
    """One grid trial for each init kind, sharing operator and truth.

    Solver failures are recorded with error 1.0 rather than raised.
    """
    inits = cfg.inits if inits is None else tuple(inits)
    op, truth, y, key = trial_problem(cfg, n, os_index, trial_index)
    base = dict(n=n, oversampling=cfg.oversamplings[os_index], m=op.dims.m, trial=trial_index, seed=key.trial)
    return [_attempt(cfg, op, truth, y, key, init, base) for init in inits]


def _run_batch(args):
    cfg, items = args
    return [r for item in items for r in run_trial(cfg, *item)]


def _summarize(cfg: ExperimentConfig, rows) -> list[CellSummary]:
    cells = []
    by_cell = {}
    for r in rows:
        by_cell.setdefault((r.n, r.oversampling, r.init), []).append(r)
    for n in cfg.ns:
        for o in cfg.oversamplings:
            for init in cfg.inits:
                group = by_cell[(n, o, init)]
                assert len(group) == cfg.trials
                ok = [r for r in group if r.status == "ok"]
                cells.append(CellSummary(
                    n=n, oversampling=o, m=group[0].m, init=init,
                    median_error=float(statistics.median(r.rel_error for r in group)),
                    success_frac=len(ok) / len(group),
                    median_iters=float(statistics.median(r.iters for r in ok)) if ok else math.nan,
                ))
    return cells


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_sweep(cfg: ExperimentConfig, jobs: int | None = 1, chunk: int = 10) -> SweepResult:
    """All (n, oversampling, init, trial) combinations, merged by key order.

    With ``jobs > 1`` trials are batched onto a process pool; the result is
    identical to the serial run because every trial is self-seeded.
    """
    items = [(n, k, t) for n in cfg.ns for k in range(len(cfg.oversamplings)) for t in range(cfg.trials)]
    jobs = default_jobs() if jobs is None else jobs
    if jobs < 1:
        raise InvalidParameters("jobs must be >= 1")
    if jobs == 1:
        rows = _run_batch((cfg, items))
    else:
        batches = [(cfg, items[i:i + chunk]) for i in range(0, len(items), chunk)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [r for batch in pool.map(_run_batch, batches) for r in batch]
    # merge order: grid order of (n, oversampling, init), then trial index
    rows.sort(key=lambda r: (cfg.ns.index(r.n), cfg.oversamplings.index(r.oversampling),
                             cfg.inits.index(r.init), r.trial))
    return SweepResult(config=cfg, rows=rows, cells=_summarize(cfg, rows))


# -- trajectories ---------------------------------------------------------------

@dataclass
class TrajectoryRun:
    trajectory: als.Trajectory
    state: als.FactorState | None
    rel_error: float
    seed: int
    paths: list = field(default_factory=list)


def _write_trajectory(traj, seed, out_dir, header_lines, log_sin=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"trajectory_{seed}.csv"
    svg_path = out_dir / f"trajectory_{seed}.svg"
    with open(csv_path, "w", newline="") as fh:
        traj.to_csv(fh, header_lines)
    paths = [csv_path]
    if len(traj.records) and np.isfinite(traj.column("sin_v")).any():
        emit_plots(traj, "trajectory", svg_path, log_sin=log_sin)
        paths.append(svg_path)
    return paths


def _single_cell(cfg: ExperimentConfig):
    if len(cfg.ns) != 1 or len(cfg.oversamplings) != 1 or len(cfg.inits) != 1:
        raise InvalidParameters("trajectory runs need a single (n, oversampling, init) cell")


def run_trajectory(cfg: ExperimentConfig, out_dir=None, trial_index: int = 0, header_lines=(),
                   oracle: bool = False) -> TrajectoryRun:
    """Single logged run; writes ``trajectory_<seed>.csv`` and ``.svg`` when ``out_dir`` is given.

    ``oracle=True`` swaps the Gaussian operator for the isotropic oracle, which
    reaches the truth in one iteration. On solver failure the partial
    trajectory is written before the exception propagates.
    """
    _single_cell(cfg)
    n1, n2 = cfg.shape(cfg.ns[0])
    op, truth, y, key = trial_problem(cfg, cfg.ns[0], 0, trial_index)
    if oracle:
        op = isotropic_oracle(ProblemDims(n1, n2, n1 * n2, rank=cfg.rank))
        y = op.forward(np.outer(*truth) if cfg.rank == 1 else truth[0] @ truth[1].T)
    v0 = _start(cfg, op, y, key, cfg.inits[0])
    try:
        state, traj = _solve(cfg, op, y, v0, truth)
    except SolverFailure as exc:
        if out_dir is not None and getattr(exc, "trajectory", None) is not None:
            _write_trajectory(exc.trajectory, cfg.master_seed, out_dir, header_lines)
        raise
    _, err = als.reconstruct(state, truth)
    run = TrajectoryRun(trajectory=traj, state=state, rel_error=err, seed=cfg.master_seed)
    if out_dir is not None:
        run.paths = _write_trajectory(traj, cfg.master_seed, out_dir, header_lines)
    return run


def run_rank_r_trajectory(cfg: ExperimentConfig, out_dir=None, trial_index: int = 0,
                          header_lines=()) -> TrajectoryRun:
    """Rank-r analogue of :func:`run_trajectory` with principal-angle metrics.

    A rank-1 config is routed to the rank-1 solver with the same seeds.
    """
    _single_cell(cfg)
    return run_trajectory(cfg, out_dir, trial_index, header_lines)


def with_cell(cfg: ExperimentConfig, n: int, oversampling: float, init: str, **kw) -> ExperimentConfig:
    return replace(cfg, ns=(n,), oversamplings=(oversampling,), inits=(init,), **kw)
