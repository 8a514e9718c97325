"""Alternating least squares for rank-one and rank-r matrix sensing.

Rank one follows the normalized recursion

    u_half = argmin_u ||y - A(u v_t^T)||,   u_{t+1} = u_half / ||u_half||
    v_half = argmin_v ||y - A(u_{t+1} v^T)||, v_{t+1} = v_half / ||v_half||

and reconstructs ``X_hat = u_{t+1} v_half^T``. The rank-r variant replaces
the normalization by a sign-fixed thin QR of each half-step factor.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import DegenerateIterate, DimensionMismatch, IllConditionedSubproblem, InvalidParameters

__all__ = [
    "StopRule",
    "FactorState",
    "TrajectoryRecord",
    "Trajectory",
    "TRAJECTORY_HEADER",
    "solve_least_squares",
    "cgls",
    "ls_update_u",
    "ls_update_v",
    "normalize",
    "orthonormalize",
    "angle_metrics",
    "als_run",
    "als_run_rank_r",
    "reconstruct",
    "phase_threshold",
]

TRAJECTORY_HEADER = "t,sin_u,cos_u,sin_v,cos_v,rel_residual,phase"

CG_SWITCH_COND = 1e6
MAX_COND = 1e12
_NORM_FLOOR = 1e-300


def _loglog(n2: int) -> float:
    return max(math.log(math.log(n2)), 1.0) if n2 > 1 else 1.0


@dataclass(frozen=True)
class StopRule:
    max_iters: int
    residual_tol: float = 1e-10
    angle_tol: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParameters("max_iters must be >= 1")
        if self.residual_tol < 0 or self.angle_tol < 0:
            raise InvalidParameters("tolerances must be nonnegative")

    @classmethod
    def default(cls, n2: int, eps: float = 1e-8, **kw) -> "StopRule":
        """Ten times the ``(log n2 + log(1/eps)) / log log n2`` iteration rate.

        ``log log n2`` is floored at 1 so tiny problems get a finite budget.
        """
        ln = math.log(max(n2, 2))
        max_iters = math.ceil(10 * (ln + math.log(1 / eps)) / _loglog(n2))
        return cls(max_iters=max_iters, **kw)


@dataclass
class FactorState:
    u: np.ndarray
    v: np.ndarray
    u_half: np.ndarray | None = None
    v_half: np.ndarray | None = None
    # v_t that produced u_half; needed to re-evaluate the normal equation
    v_prev: np.ndarray | None = None
    t: int = 0


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    sin_u: float
    cos_u: float
    sin_v: float
    cos_v: float
    rel_residual: float
    phase: str


@dataclass
class Trajectory:
    records: list[TrajectoryRecord] = field(default_factory=list)
    # objective after every half-step, evaluated at the unnormalized iterate
    half_residuals: list[float] = field(default_factory=list)
    # relative Frobenius error of u_{t+1} v_half^T per iteration (truth known only)
    rel_errors: list[float] = field(default_factory=list)
    status: str = "ok"

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, fh=None, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(TRAJECTORY_HEADER + "\n")
        for r in self.records:
            vals = (r.sin_u, r.cos_u, r.sin_v, r.cos_v, r.rel_residual)
            buf.write(f"{r.t}," + ",".join(f"{x:.17g}" for x in vals) + f",{r.phase}\n")
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


# -- least squares ------------------------------------------------------------

def cgls(B: np.ndarray, y: np.ndarray, tol: float = 1e-12, maxiter: int | None = None) -> np.ndarray:
    """Conjugate gradient on the normal equations ``B^T B x = B^T y``.

    Stops when ``||B^T (y - B x)|| <= tol * ||B^T y||``.
    """
    n = B.shape[1]
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n)
    r = y.astype(float).copy()
    s = B.T @ r
    p = s.copy()
    gamma = s @ s
    stop = tol * math.sqrt(gamma)
    for _ in range(maxiter):
        if math.sqrt(gamma) <= stop or gamma == 0.0:
            break
        q = B @ p
        alpha = gamma / (q @ q)
        x += alpha * p
        r -= alpha * q
        s = B.T @ r
        gamma_new = s @ s
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x


def solve_least_squares(B: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``argmin_x ||y - B x||`` via Cholesky of the Gram matrix, CGLS if poorly conditioned."""
    G = B.T @ B
    rhs = B.T @ y
    anorm = np.abs(G).sum(axis=0).max()
    if anorm == 0.0:
        raise IllConditionedSubproblem("design matrix is zero")
    c, info = lapack.dpotrf(G, lower=1)
    if info != 0:
        raise IllConditionedSubproblem(f"Gram matrix not positive definite (potrf info={info})")
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    if cond > MAX_COND:
        raise IllConditionedSubproblem(f"Gram condition estimate {cond:.3g} exceeds {MAX_COND:g}")
    if cond > CG_SWITCH_COND:
        return cgls(B, y)
    return scipy.linalg.cho_solve((c, True), rhs, check_finite=False)


def ls_update_u(op, y, v) -> np.ndarray:
    """Exact minimizer of ``||y - A(u v^T)||`` over u (``v`` may be an ``(n2, r)`` block)."""
    u, _ = _ls_u(op, y, v)
    return u


def ls_update_v(op, y, u) -> np.ndarray:
    v, _ = _ls_v(op, y, u)
    return v


def _check_y(op, y):
    y = np.asarray(y, dtype=float)
    if y.shape != (op.dims.m,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({op.dims.m},)")
    return y


def _ls_u(op, y, v):
    y = _check_y(op, y)
    B = op.left_design(v)
    x = solve_least_squares(B, y)
    res = float(np.linalg.norm(y - B @ x))
    return (x if np.ndim(v) == 1 else x.reshape(op.dims.n1, -1)), res


def _ls_v(op, y, u):
    y = _check_y(op, y)
    B = op.right_design(u)
    x = solve_least_squares(B, y)
    res = float(np.linalg.norm(y - B @ x))
    return (x if np.ndim(u) == 1 else x.reshape(op.dims.n2, -1)), res


def normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    nrm = np.linalg.norm(w)
    if not nrm > _NORM_FLOOR:
        raise DegenerateIterate(f"least-squares iterate collapsed (norm {nrm:.3g})")
    return w / nrm


def orthonormalize(W) -> np.ndarray:
    """Thin QR factor with nonnegative diagonal of R (so one column reduces to ``normalize``)."""
    W = np.asarray(W, dtype=float)
    Q, R = np.linalg.qr(W)
    d = np.diag(R)
    if not np.all(np.abs(d) > max(_NORM_FLOOR, 1e-13 * np.abs(d).max(initial=0.0))):
        raise DegenerateIterate("factor lost rank during orthonormalization")
    return Q * np.where(d < 0, -1.0, 1.0)


def angle_metrics(w, w_star) -> tuple[float, float]:
    """(sin, cos) of the angle between unit vectors or of the largest principal angle.

    The sine is computed from the residual of the projection rather than
    ``sqrt(1 - cos^2)`` so it stays accurate far below ``sqrt(eps)``.
    """
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if w.shape != w_star.shape:
        raise DimensionMismatch(f"shapes {w.shape} and {w_star.shape} differ")
    if w.ndim == 1:
        c = float(w_star @ w)
        s = float(np.linalg.norm(w - c * w_star))
        return min(s, 1.0), min(abs(c), 1.0)
    overlap = w_star.T @ w
    c = float(np.linalg.svd(overlap, compute_uv=False).min())
    s = float(np.linalg.norm(w - w_star @ overlap, ord=2))
    return min(s, 1.0), min(c, 1.0)


def phase_threshold(n2: int, phase_c: float = 1.0) -> float:
    """Alignment ``cos(theta_v)`` at which phase 2 starts: ``c / log n2``."""
    return phase_c / max(math.log(n2), 1.0) if n2 > 1 else phase_c


def _truth_dirs(truth, rank1: bool):
    if truth is None:
        return None
    a, b = (np.asarray(x, dtype=float) for x in truth)
    if rank1:
        return a / np.linalg.norm(a), b / np.linalg.norm(b), np.outer(a, b)
    Qa = np.linalg.qr(a.reshape(a.shape[0], -1))[0]
    Qb = np.linalg.qr(b.reshape(b.shape[0], -1))[0]
    return Qa, Qb, a.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T


def _run(op, y, v0, stop: StopRule | None, truth, phase_c, rank1: bool):
    y = _check_y(op, y)
    n2 = op.dims.n2
    stop = stop or StopRule.default(n2)
    dirs = _truth_dirs(truth, rank1)
    y_norm = float(np.linalg.norm(y)) or 1.0
    threshold = phase_threshold(n2, phase_c)
    step = normalize if rank1 else orthonormalize

    v = np.asarray(v0, dtype=float)
    state = FactorState(u=np.full(op.dims.n1 if rank1 else (op.dims.n1, v.shape[1]), np.nan), v=v)
    traj = Trajectory()
    phase = "phase1"

    def record(t, u, v, res):
        nonlocal phase
        if dirs is None:
            su = cu = sv = cv = math.nan
        else:
            su, cu = (math.nan, math.nan) if t == 0 else angle_metrics(u, dirs[0])
            sv, cv = angle_metrics(v, dirs[1])
            if cv >= threshold:
                phase = "phase2"
        traj.records.append(TrajectoryRecord(t, su, cu, sv, cv, res, phase))

    record(0, None, v, math.nan)
    try:
        for t in range(1, stop.max_iters + 1):
            u_half, res_u = _ls_u(op, y, state.v)
            u = step(u_half)
            v_half, res_v = _ls_v(op, y, u)
            v_new = step(v_half)
            state = FactorState(u=u, v=v_new, u_half=u_half, v_half=v_half, v_prev=state.v, t=t)
            traj.half_residuals.extend([res_u, res_v])
            if dirs is not None:
                err = np.linalg.norm(reconstruct(state) - dirs[2]) / np.linalg.norm(dirs[2])
                traj.rel_errors.append(float(err))
            record(t, u, v_new, res_v / y_norm)
            last = traj.records[-1]
            if res_v / y_norm <= stop.residual_tol:
                break
            if dirs is not None and stop.angle_tol > 0 and max(last.sin_u, last.sin_v) <= stop.angle_tol:
                break
    except (DegenerateIterate, IllConditionedSubproblem) as exc:
        traj.status = type(exc).__name__
        exc.state = state
        exc.trajectory = traj
        raise
    return state, traj


def als_run(op, y, v0, stop: StopRule | None = None, truth=None, phase_c: float = 1.0):
    """Rank-one ALS with normalization.

    ``truth`` is an optional ``(u_star, v_star)`` pair (any scale); angle
    columns are NaN without it. On solver failure the raised exception
    carries ``.state`` and ``.trajectory`` with everything computed so far.
    """
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (op.dims.n2,):
        raise DimensionMismatch(f"v0 has shape {v0.shape}, expected ({op.dims.n2},)")
    if abs(np.linalg.norm(v0) - 1.0) > 1e-10:
        raise InvalidParameters("v0 must be a unit vector")
    return _run(op, y, v0, stop, truth, phase_c, rank1=True)


def als_run_rank_r(op, y, V0, stop: StopRule | None = None, truth=None, phase_c: float = 1.0):
    """Rank-r ALS with column orthonormalization after each half-step.

    ``truth`` is an optional ``(U_star, V_star)`` pair with ``X* = U_star V_star^T``;
    angle metrics use the largest principal angle between column spaces.
    """
    V0 = np.asarray(V0, dtype=float)
    if V0.ndim != 2 or V0.shape[0] != op.dims.n2:
        raise DimensionMismatch(f"V0 has shape {V0.shape}, expected ({op.dims.n2}, r)")
    if not np.allclose(V0.T @ V0, np.eye(V0.shape[1]), atol=1e-10):
        raise InvalidParameters("V0 must have orthonormal columns")
    return _run(op, y, V0, stop, truth, phase_c, rank1=False)


def reconstruct(state: FactorState, truth=None):
    """``X_hat = u_t v_half^T`` (or ``U_t V_half^T``); with ``truth`` also the relative error."""
    if state.v_half is None:
        raise InvalidParameters("reconstruct needs at least one full iteration")
    u, vh = state.u, state.v_half
    X = np.outer(u, vh) if u.ndim == 1 else u @ vh.T
    if truth is None:
        return X
    a, b = (np.asarray(x, dtype=float) for x in truth)
    X_star = np.outer(a, b) if a.ndim == 1 else a @ b.T
    return X, float(np.linalg.norm(X - X_star) / np.linalg.norm(X_star))
