"""Numerical checks of the convergence argument for rank-one ALS.

Everything here works in the canonical frame ``u* = e1``, ``v* = e1``:
parallel/perpendicular splits, the auxiliary sequence driven by the
resampled operator, closeness certificates with the ``c_t`` schedule, and
concentration inequalities evaluated on measured iterates. Inequalities whose
constants are hidden by ``≲`` use a configurable multiplier and report
ratios; the flags are informative, never fatal.

Concentration row families (suffix ``_u`` or ``_v`` for the update studied,
``_aux`` for the auxiliary-operator variant):

``cross_sum``      ``(1/m) ||sum_i (A_i)_11 O_i e1||`` against ``4 sqrt(n/m)``
``offdiag_iterate``  off-diagonal first row applied to the iterate's perp part
``offdiag_diag``   the same row against the diagonal-block image of the iterates
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import als
from .errors import (
    CanonicalFrameRequired,
    DegenerateIterate,
    IllConditionedSubproblem,
    InvalidDimension,
    InvalidParameters,
    NotSupportedInStreamedMode,
)
from .initialization import random_init
from .rand_stream import Lane, StreamKey, derive_trial_id, gaussian_grid
from .sensing import (
    DEFAULT_MEMORY_BUDGET,
    AuxiliaryOperator,
    OperatorSplit,
    ProblemDims,
    SensingOperator,
    build_auxiliary,
    build_operator,
    project_offdiag,
)

__all__ = [
    "ParPerpView",
    "par_perp",
    "c_t",
    "IsotropicOracle",
    "isotropic_oracle",
    "DiagRow",
    "DiagConfig",
    "RipEstimate",
    "estimate_rip",
    "CouplingRecord",
    "AuxiliaryCoupling",
    "coupled_run",
    "check_normal_equation",
    "PerpDecreaseReport",
    "check_perp_decrease",
    "RecursionReport",
    "check_convergence_recursion",
    "check_concentration_bounds",
    "write_diag_csv",
    "DIAG_HEADER",
    "DiagnosisReport",
    "diagnostic_problem",
    "diagnose",
]

DIAG_HEADER = "t,check_name,lhs,rhs,ratio,satisfied"

# i-offset of RIP test matrices inside the trial lane (0..3 hold ground truths)
_RIP_LANE_OFFSET = 16


@dataclass(frozen=True)
class ParPerpView:
    parallel_norm: float
    perp_norm: float
    parallel_coeff: float


def par_perp(w, w_star) -> ParPerpView:
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    coeff = float(w_star @ w)
    perp = float(np.linalg.norm(w - coeff * w_star))
    return ParPerpView(abs(coeff), perp, coeff)


def c_t(t: int, n2: int) -> float:
    """Closeness schedule ``(1 + 1/log n2)^t - 1`` (natural log)."""
    if n2 < 3:
        raise InvalidDimension(f"c_t needs n2 >= 3, got {n2}")
    if t < 0:
        raise InvalidParameters("t must be nonnegative")
    return math.expm1(t * math.log1p(1.0 / math.log(n2)))


@dataclass(frozen=True)
class DiagRow:
    t: int
    check_name: str
    lhs: float
    rhs: float
    satisfied: bool | None

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs


def _fmt_flag(flag):
    return "na" if flag is None else str(int(bool(flag)))


def write_diag_csv(rows, fh=None, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(DIAG_HEADER + "\n")
    for r in rows:
        buf.write(f"{r.t},{r.check_name},{r.lhs:.17g},{r.rhs:.17g},{r.ratio:.17g},{_fmt_flag(r.satisfied)}\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def _leq(lhs, rhs, atol=1e-10):
    return bool(lhs <= rhs + atol)


# -- isotropic oracle ------------------------------------------------------------

class IsotropicOracle(SensingOperator):
    """Operator with ``A* A = Id`` exactly: ``m = n1 n2`` and ``A_i = sqrt(m) E_jk``.

    Measurement ``i = j * n2 + k`` reads entry ``X[j, k]``. Stands in for the
    infinite-sample limit in tests.
    """

    def __init__(self, dims: ProblemDims, canonical: bool = True, *, _transposed: bool = False):
        full = ProblemDims(dims.n1, dims.n2, dims.n1 * dims.n2, dims.rank)
        super().__init__(full, StreamKey(0), "dense", canonical, _transposed=_transposed)

    def _raw_block(self, i0, i1):
        d = self._base_dims
        blk = np.zeros((i1 - i0, d.n1, d.n2))
        idx = np.arange(i0, i1)
        blk[idx - i0, idx // d.n2, idx % d.n2] = math.sqrt(d.m)
        return blk

    def _clone(self, **kw):
        return IsotropicOracle(self._base_dims, self.canonical, **kw)


def isotropic_oracle(dims: ProblemDims) -> IsotropicOracle:
    return IsotropicOracle(dims)


# -- RIP estimate ------------------------------------------------------------------

@dataclass(frozen=True)
class DiagConfig:
    horizon: int = 8
    eta: float = 64.0
    rip_samples: int = 200
    constant: float = 10.0

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidParameters("horizon T must be >= 1")
        if not self.eta > 1:
            raise InvalidParameters("eta must exceed 1")
        if self.rip_samples < 1 or not self.constant > 0:
            raise InvalidParameters("rip_samples >= 1 and constant > 0 required")


@dataclass
class RipEstimate:
    """Sampled distortion; a lower estimate of the true RIP constant, never a certificate."""

    delta_hat: float
    sample_count: int
    max_rank_tested: int = 4
    distortions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    split_rows: list[DiagRow] = field(default_factory=list)


def _rip_factors(seed: StreamKey, s: int, n1: int, n2: int, rank: int):
    g = gaussian_grid(seed.master_seed, Lane.TRIAL, seed.trial, [_RIP_LANE_OFFSET + s], np.arange(rank), n1 + n2)
    return g[0, :, :n1].T, g[0, :, n1:].T


def estimate_rip(op: SensingOperator, samples: int, seed: StreamKey, rank: int = 4) -> RipEstimate:
    """Max of ``| ||A(Z)||^2 - 1 |`` over unit-Frobenius random rank-``rank`` Z.

    Sample ``s`` depends only on ``(seed, s)``, so the estimate is a running
    maximum over a prefix-stable stream. When ``op`` is in the canonical frame
    the consequences for the D/O split are evaluated on the first
    ``min(samples, 50)`` random pairs with ``delta_hat`` in place of delta.
    """
    if samples < 1:
        raise InvalidParameters("samples must be >= 1")
    n1, n2 = op.dims.n1, op.dims.n2
    dist = np.empty(samples)
    for s in range(samples):
        a, b = _rip_factors(seed, s, n1, n2, rank)
        Z = a @ b.T
        Z /= np.linalg.norm(Z)
        dist[s] = abs(float(np.sum(op.forward(Z) ** 2)) - 1.0)
    delta = float(dist.max())
    rows = _split_rows(op, seed, min(samples, 50), delta)
    return RipEstimate(delta, samples, rank, dist, rows)


def _split_rows(op, seed, pairs, delta):
    n1, n2 = op.dims.n1, op.dims.n2
    rows = []
    D = O = None
    if op.canonical and not isinstance(op, (OperatorSplit, IsotropicOracle)) and min(n1, n2) > 1:
        D, O = OperatorSplit("D", op), OperatorSplit("O", op)
    for s in range(pairs):
        a, b = _rip_factors(seed, 10_000 + s, n1, n2, 2)
        u1, v1 = a[:, 0], b[:, 0]
        u2 = a[:, 1] - (a[:, 1] @ u1) / (u1 @ u1) * u1
        v2 = b[:, 1]
        prod = abs(float(op.forward_rank1(u1, v1) @ op.forward_rank1(u2, v2)))
        scale = np.linalg.norm(u1) * np.linalg.norm(v1) * np.linalg.norm(u2) * np.linalg.norm(v2)
        rows.append(DiagRow(s, "rip_orthogonal_pair", prod, delta * scale, _leq(prod, delta * scale)))
        if D is None:
            continue
        uv = np.linalg.norm(u1) * np.linalg.norm(v1)
        od = np.linalg.norm(O.adjoint(D.forward_rank1(u1, v1)), 2)
        do = np.linalg.norm(D.adjoint(O.forward_rank1(u1, v1)), 2)
        oo = np.linalg.norm(O.adjoint(O.forward_rank1(u1, v1)) - project_offdiag(np.outer(u1, v1)), 2)
        rows.append(DiagRow(s, "rip_OstarD", od, delta * uv, _leq(od, delta * uv)))
        rows.append(DiagRow(s, "rip_DstarO", do, delta * uv, _leq(do, delta * uv)))
        rows.append(DiagRow(s, "rip_OstarO_minus_PO", oo, delta * uv, _leq(oo, delta * uv)))
    return rows


# -- coupled original/auxiliary run -----------------------------------------------------

@dataclass(frozen=True)
class CouplingRecord:
    t: int
    cos_v: float
    # step from v_{t-1} started in phase 1 (t = 0 counts as phase 1)
    phase1: bool
    par_diff_v: float
    perp_diff_v: float
    bound_v: float
    satisfied_v: bool | None
    par_diff_u: float
    perp_diff_u: float
    bound_u: float
    satisfied_u: bool | None


@dataclass
class AuxiliaryCoupling:
    primary: list[als.FactorState]
    auxiliary: list[als.FactorState | None]
    records: list[CouplingRecord]
    status: str = "ok"
    aux_status: str = "ok"

    def phase1_satisfied(self) -> bool:
        """Whether the v-closeness bound held at every phase-1 step with an available auxiliary."""
        return all(r.satisfied_v for r in self.records if r.phase1 and r.satisfied_v is not None)

    def rows(self) -> list[DiagRow]:
        out = []
        for r in self.records:
            if r.t > 0:
                out.append(DiagRow(r.t, "closeness_u", max(r.par_diff_u, r.perp_diff_u), r.bound_u, r.satisfied_u))
            out.append(DiagRow(r.t, "closeness_v", max(r.par_diff_v, r.perp_diff_v), r.bound_v, r.satisfied_v))
        return out


def _closeness(w, w_aux):
    # canonical frame: parallel part is coordinate 0
    return abs(w[0] - w_aux[0]), float(np.linalg.norm(w[1:] - w_aux[1:]))


def _als_step(op, y, v):
    u_half = als.ls_update_u(op, y, v)
    u = als.normalize(u_half)
    v_half = als.ls_update_v(op, y, u)
    return als.FactorState(u=u, v=als.normalize(v_half), u_half=u_half, v_half=v_half, v_prev=v)


def coupled_run(op: SensingOperator, aux: SensingOperator, v0, stop: als.StopRule | None = None,
                phase_c: float = 1.0) -> AuxiliaryCoupling:
    """Run ALS on ``op`` and ``aux`` in lockstep from the same ``v0`` and track closeness.

    Both sequences see the same observations ``y = A(e1 e1^T)``. The primary
    iterates never depend on the auxiliary ones.
    """
    if not op.canonical:
        raise CanonicalFrameRequired("coupled_run works in the canonical frame only")
    n1, n2 = op.dims.n1, op.dims.n2
    e1u, e1v = np.eye(n1)[0], np.eye(n2)[0]
    y = op.forward_rank1(e1u, e1v)
    stop = stop or als.StopRule.default(n2)
    threshold = als.phase_threshold(n2, phase_c)
    v0 = np.asarray(v0, dtype=float)

    primary = [als.FactorState(u=np.full(n1, np.nan), v=v0)]
    auxiliary: list = [als.FactorState(u=np.full(n1, np.nan), v=v0.copy())]
    records = [CouplingRecord(0, abs(v0[0]), True, 0.0, 0.0, 0.0, True, 0.0, 0.0, 0.0, None)]
    coupling = AuxiliaryCoupling(primary, auxiliary, records)
    y_norm = float(np.linalg.norm(y)) or 1.0

    for t in range(1, stop.max_iters + 1):
        prev = primary[-1]
        try:
            st = _als_step(op, y, prev.v)
        except (DegenerateIterate, IllConditionedSubproblem) as exc:
            coupling.status = type(exc).__name__
            break
        st.t = t
        primary.append(st)
        aux_prev = auxiliary[-1]
        st_aux = None
        if aux_prev is not None:
            try:
                st_aux = _als_step(aux, y, aux_prev.v)
                st_aux.t = t
            except (DegenerateIterate, IllConditionedSubproblem) as exc:
                coupling.aux_status = type(exc).__name__
        auxiliary.append(st_aux)

        phase1 = records[-1].cos_v < threshold
        cu = c_t(2 * t - 1, n2) if n2 >= 3 else math.nan
        cv = c_t(2 * t, n2) if n2 >= 3 else math.nan
        if st_aux is None:
            nan = math.nan
            rec = CouplingRecord(t, abs(st.v[0]), phase1, nan, nan, nan, None, nan, nan, nan, None)
        else:
            pv, qv = _closeness(st.v, st_aux.v)
            pu, qu = _closeness(st.u, st_aux.u)
            bv = cv * abs(st.v[0])
            bu = cu * abs(st.u[0])
            rec = CouplingRecord(t, abs(st.v[0]), phase1, pv, qv, bv, bool(max(pv, qv) <= bv),
                                 pu, qu, bu, bool(max(pu, qu) <= bu))
        records.append(rec)

        res = np.linalg.norm(y - op.forward_rank1(st.u, st.v_half)) / y_norm
        sin_v = float(np.linalg.norm(st.v[1:]))
        sin_u = float(np.linalg.norm(st.u[1:]))
        if res <= stop.residual_tol:
            break
        if stop.angle_tol > 0 and max(sin_u, sin_v) <= stop.angle_tol:
            break
    return coupling


# -- inequality checks ------------------------------------------------------------------

def check_normal_equation(op, state: als.FactorState, truth) -> float:
    """Relative gap between both sides of

        u_half = (X* v) + [(Id - A*A)(u_half v^T - X*)] v,

    where ``v`` is the unit vector that produced ``u_half``.
    """
    if state.u_half is None or state.v_prev is None:
        raise InvalidParameters("state has no half-step")
    u_star, v_star = (np.asarray(x, dtype=float) for x in truth)
    u_half, v = state.u_half, state.v_prev
    Z = np.outer(u_half, v) - np.outer(u_star, v_star)
    W = Z - op.adjoint(op.forward(Z))
    lhs = u_half
    rhs = u_star * (v_star @ v) + W @ v
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


@dataclass(frozen=True)
class PerpDecreaseReport:
    delta_hat: float
    error_lhs: float
    perp_lhs: float
    norm_lhs: float
    rhs: float
    perp_ratio: float
    error_ok: bool
    perp_ok: bool
    norm_ok: bool

    def rows(self, t: int) -> list[DiagRow]:
        return [
            DiagRow(t, "perp_decrease_error", self.error_lhs, self.rhs, self.error_ok),
            DiagRow(t, "perp_decrease_perp", self.perp_lhs, self.rhs, self.perp_ok),
            DiagRow(t, "perp_decrease_norm", self.norm_lhs, 2.0, self.norm_ok),
        ]


def check_perp_decrease(op, v, u_half, truth, delta_hat: float, atol: float = 1e-10) -> PerpDecreaseReport:
    """Evaluate ``||u_half - <v*,v> u*||``, ``||u_half^perp||`` against ``delta/(1-delta) ||v^perp||``
    and ``||u_half|| <= 2`` with ``delta_hat`` standing in for delta.

    ``truth`` is ``(u*, v*)`` with unit-norm factors. ``op`` is unused but kept
    so callers can pass the operator the iterate came from.
    """
    if not 0 <= delta_hat < 1:
        raise InvalidParameters("delta_hat must lie in [0, 1)")
    u_star, v_star = (np.asarray(x, dtype=float) for x in truth)
    v = np.asarray(v, dtype=float)
    u_half = np.asarray(u_half, dtype=float)
    vp = par_perp(v, v_star)
    up = par_perp(u_half, u_star)
    rhs = delta_hat / (1.0 - delta_hat) * vp.perp_norm
    err = float(np.linalg.norm(u_half - vp.parallel_coeff * u_star))
    nrm = float(np.linalg.norm(u_half))
    ratio = up.perp_norm / vp.perp_norm if vp.perp_norm > 0 else (0.0 if up.perp_norm == 0 else math.inf)
    return PerpDecreaseReport(delta_hat, err, up.perp_norm, nrm, rhs, ratio,
                              _leq(err, rhs, atol), _leq(up.perp_norm, rhs, atol), nrm <= 2.0)


@dataclass(frozen=True)
class RecursionReport:
    lower_bound: float
    lower_bound_simple: float
    upper_bound: float
    parallel_sq: float
    perp_sq: float
    lower_ok: bool
    upper_ok: bool


def check_convergence_recursion(alpha, beta, vp, vperp, u1p, u1perp, rtol: float = 1e-12) -> RecursionReport:
    """Compare measured ``||u_{t+1}^par||^2``, ``||u_{t+1}^perp||^2`` with

        alpha vp^2 / (beta + (alpha - beta) vp^2)    (lower bound, also its weaker form vp^2 / (beta/alpha + vp^2))
        beta / (alpha vp^2) * vperp^2                (upper bound)
    """
    if not 0 < beta < alpha < 1:
        raise InvalidParameters(f"need 0 < beta < alpha < 1, got alpha={alpha}, beta={beta}")
    if abs(vp**2 + vperp**2 - 1.0) > 1e-10:
        raise InvalidParameters("vp^2 + vperp^2 must equal 1")
    if vp == 0:
        raise InvalidParameters("the recursion needs a nonzero parallel component")
    vp2 = vp * vp
    lower = alpha * vp2 / (beta + (alpha - beta) * vp2)
    simple = vp2 / (beta / alpha + vp2)
    upper = beta / (alpha * vp2) * vperp**2
    p2, q2 = u1p**2, u1perp**2
    return RecursionReport(lower, simple, upper, p2, q2,
                           p2 >= lower * (1 - rtol), q2 <= upper * (1 + rtol))


def _concentration_block(A, At, orient, seq, aux_seq, T, cfg, m):
    """Rows for the concentration inequalities in one orientation.

    ``A``/``At`` hold original/auxiliary matrices already oriented so the
    update under study is the left factor; ``seq``/``aux_seq`` are lists of
    ``(w_t, z_half)`` pairs (right factor, resulting left half-step).
    """
    rows = []
    n_left = A.shape[1]
    a11 = A[:, 0, 0]
    col_o = A[:, :, 0].copy()
    col_o[:, 0] = 0.0
    col_ot = At[:, :, 0].copy()
    col_ot[:, 0] = 0.0
    bound_cross = 4.0 * math.sqrt(n_left / m)
    vec = a11 @ col_o / m
    vec_t = a11 @ col_ot / m
    rows.append(DiagRow(0, f"cross_sum_{orient}", float(np.linalg.norm(vec)), bound_cross, _leq(np.linalg.norm(vec), bound_cross, 0)))
    rows.append(DiagRow(0, f"cross_sum_aux_{orient}", float(np.linalg.norm(vec_t)), bound_cross,
                        _leq(np.linalg.norm(vec_t), bound_cross, 0)))
    rows.append(DiagRow(0, f"cross_sum_first_coord_{orient}", abs(float(vec[0])), 0.0, vec[0] == 0.0))

    rate = cfg.constant * math.sqrt((math.log(T) + math.log(cfg.eta)) / m)
    row_o = A[:, 0, 1:]
    row_ot = At[:, 0, 1:]
    D_in = A[:, 1:, 1:]
    for t in range(min(T + 1, len(seq), len(aux_seq))):
        if aux_seq[t] is None or seq[t] is None:
            continue
        w, z_half = seq[t]
        wt, zt_half = aux_seq[t]
        wt_perp, w_perp = wt[1:], w[1:]
        lhs_it = abs(float(a11 @ (row_o @ wt_perp))) / m
        rhs_it = rate * float(np.linalg.norm(wt_perp))
        lhs_it_aux = abs(float(a11 @ (row_ot @ w_perp))) / m
        rhs_it_aux = rate * float(np.linalg.norm(wt_perp))
        rows.append(DiagRow(t, f"offdiag_iterate_{orient}", lhs_it, rhs_it, _leq(lhs_it, rhs_it, 0)))
        rows.append(DiagRow(t, f"offdiag_iterate_aux_{orient}", lhs_it_aux, rhs_it_aux, _leq(lhs_it_aux, rhs_it_aux, 0)))

        zt_perp = zt_half[1:]
        dt = np.einsum("ijk,j,k->i", D_in, zt_perp, wt_perp)
        lhs_dd = abs(float((row_o @ wt[1:]) @ dt)) / m
        rhs_dd = rate * float(np.linalg.norm(dt)) / math.sqrt(m)
        z_perp = z_half[1:]
        d = np.einsum("ijk,j,k->i", D_in, z_perp, w_perp)
        lhs_dd_aux = abs(float((row_ot @ w[1:]) @ d)) / m
        rhs_dd_aux = rate * float(np.linalg.norm(d)) / math.sqrt(m)
        rows.append(DiagRow(t, f"offdiag_diag_{orient}", lhs_dd, rhs_dd, _leq(lhs_dd, rhs_dd, 0)))
        rows.append(DiagRow(t, f"offdiag_diag_aux_{orient}", lhs_dd_aux, rhs_dd_aux, _leq(lhs_dd_aux, rhs_dd_aux, 0)))
    return rows


def check_concentration_bounds(op: SensingOperator, aux: AuxiliaryOperator, coupling: AuxiliaryCoupling,
                               cfg: DiagConfig = DiagConfig()) -> list[DiagRow]:
    """Evaluate the concentration inequalities on stored matrices and coupled iterates.

    The explicit constant 4 is used where stated; ``≲`` bounds use
    ``cfg.constant``. The v-update analogues are obtained by running the same
    code on transposed matrices with the roles of u and v exchanged
    (row names end in ``_v``).
    """
    if not op.canonical:
        raise CanonicalFrameRequired("concentration checks need the canonical frame")
    if op.storage == "streamed" or aux.storage == "streamed":
        raise NotSupportedInStreamedMode("concentration checks need materialized matrices")
    A = op.matrices()
    At = aux.matrices()
    m = op.dims.m
    T = cfg.horizon

    def pairs_u(states):
        # (v_t, u_{t+1/2}) for t = 0, 1, ...
        return [None if s is None else (s.v_prev, s.u_half) for s in states[1:]]

    def pairs_v(states):
        # (u_{t+1}, v_{t+1/2}) for t = 0, 1, ...
        return [None if s is None else (s.u, s.v_half) for s in states[1:]]

    rows = _concentration_block(A, At, "u", pairs_u(coupling.primary), pairs_u(coupling.auxiliary), T, cfg, m)
    rows += _concentration_block(A.transpose(0, 2, 1), At.transpose(0, 2, 1), "v",
                                 pairs_v(coupling.primary), pairs_v(coupling.auxiliary), T, cfg, m)
    return rows


# -- end-to-end diagnosis -----------------------------------------------------------

NORMAL_EQ_TOL = 1e-8
RECURSION_ALPHA = 0.25


@dataclass
class DiagnosisReport:
    rows: list[DiagRow]
    coupling: AuxiliaryCoupling
    rip: RipEstimate
    op: SensingOperator
    aux: AuxiliaryOperator


def diagnostic_problem(dims: ProblemDims, master_seed: int, trial: int = 0,
                       memory_budget: int = DEFAULT_MEMORY_BUDGET):
    """Canonical-frame operator, its auxiliary twin and the shared start ``v0`` of one seeded trial."""
    tid = derive_trial_id(master_seed, trial)
    key = StreamKey(master_seed, Lane.MEASUREMENT, tid)
    op = build_operator(dims, key, memory_budget=memory_budget, canonical=True)
    aux = build_auxiliary(op, StreamKey(master_seed, Lane.AUX_RESAMPLE, tid))
    return op, aux, random_init(dims, key), key


def diagnose(dims: ProblemDims, master_seed: int, trial: int = 0, cfg: DiagConfig = DiagConfig(),
             stop: als.StopRule | None = None, phase_c: float = 1.0,
             memory_budget: int = DEFAULT_MEMORY_BUDGET) -> DiagnosisReport:
    """Coupled run plus every per-iteration check, as one list of rows.

    The recursion bounds use ``alpha = 1/4`` and ``beta = 4 delta_hat^2`` and
    are reported only when ``beta < alpha``. Concentration rows need a dense
    operator and are omitted in streamed mode.
    """
    op, aux, v0, key = diagnostic_problem(dims, master_seed, trial, memory_budget)
    coupling = coupled_run(op, aux, v0, stop, phase_c)
    rip = estimate_rip(op, cfg.rip_samples, key.with_(lane=Lane.TRIAL))
    delta = rip.delta_hat
    rows = [DiagRow(0, "rip_delta_hat", delta, 1.0, delta < 1.0)] + rip.split_rows
    rows += coupling.rows()
    e1u, e1v = np.eye(dims.n1)[0], np.eye(dims.n2)[0]
    truth = (e1u, e1v)
    beta = 4.0 * delta * delta
    for st in coupling.primary[1:]:
        gap = check_normal_equation(op, st, truth)
        rows.append(DiagRow(st.t, "normal_equation", gap, NORMAL_EQ_TOL, gap <= NORMAL_EQ_TOL))
        if delta < 1.0:
            rows += check_perp_decrease(op, st.v_prev, st.u_half, truth, delta).rows(st.t)
        vp = abs(float(st.v_prev[0]))
        if beta < RECURSION_ALPHA and vp > 0:
            vperp = float(np.sqrt(max(1.0 - vp * vp, 0.0)))
            rec = check_convergence_recursion(RECURSION_ALPHA, beta, vp, vperp,
                                              abs(float(st.u[0])), float(np.linalg.norm(st.u[1:])), rtol=1e-10)
            rows.append(DiagRow(st.t, "recursion_lower", rec.lower_bound, rec.parallel_sq, rec.lower_ok))
            rows.append(DiagRow(st.t, "recursion_upper", rec.perp_sq, rec.upper_bound, rec.upper_ok))
    if op.storage == "dense":
        rows += check_concentration_bounds(op, aux, coupling, cfg)
    return DiagnosisReport(rows, coupling, rip, op, aux)
