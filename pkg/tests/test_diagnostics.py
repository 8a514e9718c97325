import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rials import als
from rials.diagnostics import (
    DiagConfig,
    c_t,
    check_concentration_bounds,
    check_convergence_recursion,
    check_normal_equation,
    check_perp_decrease,
    coupled_run,
    diagnose,
    diagnostic_problem,
    estimate_rip,
    isotropic_oracle,
    par_perp,
    write_diag_csv,
    DIAG_HEADER,
)
from rials.errors import CanonicalFrameRequired, InvalidDimension, InvalidParameters, NotSupportedInStreamedMode
from rials.rand_stream import Lane, StreamKey, gaussian_grid, sphere_sample
from rials.sensing import ProblemDims, build_auxiliary, build_operator


RECURSION_TRIALS = 30
RECURSION_MIN_HELD = 24


def canonical_problem(n1, n2, m, trial=0, seed=61, **kw):
    key = StreamKey(seed, Lane.MEASUREMENT, trial)
    op = build_operator(ProblemDims(n1, n2, m), key, canonical=True, **kw)
    e1u, e1v = np.eye(n1)[0], np.eye(n2)[0]
    return op, (e1u, e1v), op.forward_rank1(e1u, e1v), key


# -- par/perp and c_t ------------------------------------------------------------------

def test_par_perp_examples():
    e = np.eye(3)
    def fields(view):
        return (view.parallel_norm, view.perp_norm, view.parallel_coeff)

    assert fields(par_perp(e[0], e[0])) == pytest.approx((1, 0, 1))
    assert fields(par_perp(e[1], e[0])) == pytest.approx((0, 1, 0))
    v = par_perp(np.array([3, 4, 0]) / 5, e[0])
    assert (v.parallel_norm, v.perp_norm, v.parallel_coeff) == pytest.approx((0.6, 0.8, 0.6))
    assert par_perp(-e[0], e[0]).parallel_coeff == -1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_par_perp_pythagoras(w, s):
    w, s = np.array(w), np.array(s)
    if np.linalg.norm(s) < 1e-3:
        return
    s = s / np.linalg.norm(s)
    p = par_perp(w, s)
    assert abs(p.parallel_norm**2 + p.perp_norm**2 - w @ w) <= 1e-12 * max(1.0, w @ w)


def test_c_t_values():
    assert c_t(0, 256) == 0.0
    assert c_t(1, 256) == pytest.approx(1 / math.log(256), abs=1e-12)
    assert c_t(1, 256) == pytest.approx(0.180337, abs=1e-6)
    assert c_t(2, 256) == pytest.approx((1 + 1 / math.log(256)) ** 2 - 1, abs=1e-15)
    assert c_t(2, 256) == pytest.approx(0.393195, abs=1e-6)
    with pytest.raises(InvalidDimension):
        c_t(1, 2)


@pytest.mark.parametrize("n2", [3, 16, 256, 10**6])
def test_c_t_monotone_and_bounded(n2):
    vals = [c_t(t, n2) for t in range(30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert all(c <= math.expm1(t / math.log(n2)) * (1 + 1e-12) for t, c in enumerate(vals))


# -- isotropic oracle -----------------------------------------------------------------

def test_oracle_identity_composition(rng):
    op = isotropic_oracle(ProblemDims(5, 7, 1))
    assert op.dims.m == 35
    X = rng.standard_normal((5, 7))
    assert np.allclose(op.adjoint(op.forward(X)), X, atol=1e-12)
    Z = X / np.linalg.norm(X)
    assert abs(np.sum(op.forward(Z) ** 2) - 1) <= 1e-12


def test_rip_oracle_zero_distortion():
    op = isotropic_oracle(ProblemDims(6, 6, 36))
    assert estimate_rip(op, 30, StreamKey(1)).delta_hat <= 1e-12


# -- coupled run -----------------------------------------------------------------------

def test_coupled_first_record_and_aux_equal_op():
    op, truth, y, key = canonical_problem(24, 24, 300)
    v0 = sphere_sample(StreamKey(61, Lane.INIT, 0), 24)
    cp = coupled_run(op, op, v0, als.StopRule(6))
    r0 = cp.records[0]
    assert r0.t == 0 and r0.par_diff_v == 0 and r0.perp_diff_v == 0 and r0.bound_v == 0 and r0.satisfied_v
    assert np.array_equal(cp.auxiliary[0].v, v0)
    assert all(r.par_diff_v == 0 and r.perp_diff_v == 0 and r.par_diff_u == 0 for r in cp.records)


def test_coupled_oracle_identical():
    op = isotropic_oracle(ProblemDims(10, 10, 100))
    aux = isotropic_oracle(ProblemDims(10, 10, 100))
    cp = coupled_run(op, aux, sphere_sample(StreamKey(3), 10), als.StopRule(4))
    assert all(max(r.par_diff_v, r.perp_diff_v) == 0 for r in cp.records)


def test_coupled_requires_canonical(key):
    op = build_operator(ProblemDims(6, 6, 60), key)
    with pytest.raises(CanonicalFrameRequired):
        coupled_run(op, op, np.eye(6)[0])


def test_coupled_primary_unaffected_by_auxiliary():
    op, truth, y, key = canonical_problem(20, 20, 200, trial=2)
    aux = build_auxiliary(op, StreamKey(61, Lane.AUX_RESAMPLE, 2))
    v0 = sphere_sample(StreamKey(61, Lane.INIT, 2), 20)
    cp = coupled_run(op, aux, v0, als.StopRule(8, residual_tol=0))
    state, traj = als.als_run(op, y, v0, als.StopRule(8, residual_tol=0), truth=truth)
    assert np.array_equal(cp.primary[-1].v, state.v)
    assert len(cp.records) == len(traj)
    assert all(r.bound_v == pytest.approx(c_t(2 * r.t, 20) * r.cos_v) for r in cp.records)


def test_coupling_bound_at_large_m():
    # a generous sample budget puts the phase-1 closeness bound well inside its high-probability regime
    held = 0
    for trial in range(10):
        op, aux, v0, _ = diagnostic_problem(ProblemDims(32, 32, 64 * 32), 5, trial)
        held += coupled_run(op, aux, v0, als.StopRule(4)).phase1_satisfied()
    assert held >= 8


# -- normal equation --------------------------------------------------------------------

def test_normal_equation_identity_mid_run_and_converged():
    op, truth, y, key = canonical_problem(16, 16, 96, trial=4)
    v0 = sphere_sample(StreamKey(61, Lane.INIT, 4), 16)
    state, traj = als.als_run(op, y, v0, als.StopRule(1))
    assert check_normal_equation(op, state, truth) <= 1e-8
    state, traj = als.als_run(op, y, v0, truth=truth)
    assert traj.records[-1].sin_v <= 1e-8
    assert check_normal_equation(op, state, truth) <= 1e-8


def test_normal_equation_detects_perturbation(rng):
    op, truth, y, key = canonical_problem(16, 16, 96, trial=4)
    v0 = sphere_sample(StreamKey(61, Lane.INIT, 4), 16)
    state, _ = als.als_run(op, y, v0, als.StopRule(2))
    noise = 1e-3 * rng.standard_normal(16)
    state.u_half = state.u_half + noise
    assert check_normal_equation(op, state, truth) > 1e-4


# -- perp decrease ----------------------------------------------------------------------

def test_perp_decrease_at_truth_and_oracle():
    op, truth, y, key = canonical_problem(12, 12, 120)
    rep = check_perp_decrease(op, truth[1], als.ls_update_u(op, y, truth[1]), truth, 0.3)
    assert rep.perp_lhs <= 1e-8 and rep.rhs == 0 and rep.perp_ok
    orc = isotropic_oracle(ProblemDims(12, 12, 144))
    v = sphere_sample(StreamKey(8), 12)
    uh = als.ls_update_u(orc, orc.forward_rank1(*truth), v)
    assert np.all(np.abs(uh[1:]) <= 1e-14)
    with pytest.raises(InvalidParameters):
        check_perp_decrease(op, v, uh, truth, 1.0)


@functools.lru_cache(maxsize=1)
def perp_ratios(n=64, trials=100, seed=99):
    ratios = []
    for t in range(trials):
        op, truth, y, _ = canonical_problem(n, n, 12 * n, trial=t, seed=seed)
        v = sphere_sample(StreamKey(seed, Lane.INIT, t), n)
        ratios.append(check_perp_decrease(op, v, als.ls_update_u(op, y, v), truth, 0.5).perp_ratio)
    return np.array(ratios)


def test_perp_ratio_monte_carlo():
    # pilot on these seeds: median 0.296, 95th percentile 0.335, max 0.378
    assert np.mean(perp_ratios() <= 0.35) >= 0.95


@pytest.mark.xfail(strict=True, reason="0.25 sits below the sqrt(n/m) ~ 0.29 fluctuation level at m = 12n")
def test_perp_ratio_quarter_threshold():
    assert np.mean(perp_ratios() <= 0.25) >= 0.95


def test_perp_ratio_tracks_sample_ratio():
    # the ratio concentrates around sqrt(n/m)
    assert abs(np.median(perp_ratios()) - math.sqrt(1 / 12)) <= 0.03


# -- recursion --------------------------------------------------------------------------

def test_recursion_boundary_case():
    rep = check_convergence_recursion(0.25, 0.01, 1.0, 0.0, 1.0, 0.0)
    assert rep.lower_ok and rep.upper_ok
    assert rep.lower_bound == pytest.approx(1.0) and rep.upper_bound == 0.0


def test_recursion_hand_evaluation():
    delta = 0.05
    rep = check_convergence_recursion(0.25, 4 * delta**2, 0.1, math.sqrt(0.99), 0.5, math.sqrt(0.75))
    assert rep.lower_bound_simple == pytest.approx(0.2, abs=1e-12)
    assert rep.lower_bound == pytest.approx(0.0025 / 0.0124, abs=1e-12)
    assert rep.upper_bound == pytest.approx(3.96, abs=1e-12)
    assert rep.lower_bound >= rep.lower_bound_simple
    assert rep.lower_ok and rep.upper_ok
    assert not check_convergence_recursion(0.25, 0.01, 0.1, math.sqrt(0.99), 0.4, 0.0).lower_ok


@pytest.mark.parametrize("ab", [(0.1, 0.2), (0.2, 0.2), (1.0, 0.5), (0.5, 0.0)])
def test_recursion_parameter_order(ab):
    with pytest.raises(InvalidParameters):
        check_convergence_recursion(*ab, 1.0, 0.0, 1.0, 0.0)


def test_recursion_requires_unit_split():
    with pytest.raises(InvalidParameters):
        check_convergence_recursion(0.25, 0.01, 0.5, 0.5, 1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_recursion_pure(vp, a, b):
    args = (0.25, 0.04, vp, math.sqrt(1 - vp * vp), a, b)
    assert check_convergence_recursion(*args) == check_convergence_recursion(*args)


def recursion_trial(n, t, seed=99, iters=10):
    """True when every phase-one step of one trial satisfies both recursion bounds (None if beta >= alpha)."""
    op, truth, y, key = canonical_problem(n, n, 12 * n, trial=t, seed=seed)
    delta = estimate_rip(build_operator(op.dims, key), 200, key.with_(lane=Lane.TRIAL)).delta_hat
    alpha, beta = 0.25, 4 * delta**2
    if not beta < alpha:
        return None
    thr = als.phase_threshold(n)
    v = sphere_sample(StreamKey(seed, Lane.INIT, t), n)
    for _ in range(iters):
        if abs(v[0]) >= thr:
            break
        u = als.normalize(als.ls_update_u(op, y, v))
        rep = check_convergence_recursion(alpha, beta, abs(v[0]), float(np.linalg.norm(v[1:])), abs(u[0]),
                                          float(np.linalg.norm(u[1:])), rtol=1e-10)
        if not (rep.lower_ok and rep.upper_ok):
            return False
        v = als.normalize(als.ls_update_v(op, y, u))
    return True


@pytest.mark.slow
def test_recursion_monte_carlo():
    # pilot on these seeds: 27 of 30 trials satisfied both bounds at every phase-one step
    results = [recursion_trial(64, t) for t in range(RECURSION_TRIALS)]
    held = sum(r is True for r in results)
    assert held >= RECURSION_MIN_HELD


# -- RIP --------------------------------------------------------------------------------

def test_rip_large_oversampling():
    op = build_operator(ProblemDims(8, 8, 800), StreamKey(4, Lane.MEASUREMENT, 1))
    assert estimate_rip(op, 200, StreamKey(4, Lane.TRIAL, 1)).delta_hat <= 0.3


def test_rip_deterministic_and_prefix_monotone():
    op = build_operator(ProblemDims(8, 8, 100), StreamKey(4, Lane.MEASUREMENT, 2))
    seed = StreamKey(4, Lane.TRIAL, 2)
    a = estimate_rip(op, 60, seed)
    b = estimate_rip(op, 60, seed)
    c = estimate_rip(op, 120, seed)
    assert a.delta_hat == b.delta_hat
    assert c.delta_hat >= a.delta_hat
    assert np.array_equal(c.distortions[:60], a.distortions)
    with pytest.raises(InvalidParameters):
        estimate_rip(op, 0, seed)


def test_rip_split_rows_on_canonical():
    op, *_ = canonical_problem(8, 8, 200)
    est = estimate_rip(op, 20, StreamKey(1, Lane.TRIAL))
    names = {r.check_name for r in est.split_rows}
    assert names == {"rip_orthogonal_pair", "rip_OstarD", "rip_DstarO", "rip_OstarO_minus_PO"}


# -- concentration ------------------------------------------------------------------------

def test_concentration_rows_small_case():
    op, aux, v0, _ = diagnostic_problem(ProblemDims(12, 10, 200), 7)
    cp = coupled_run(op, aux, v0, als.StopRule(6))
    cfg = DiagConfig(horizon=4)
    rows = check_concentration_bounds(op, aux, cp, cfg)
    names = {r.check_name for r in rows}
    for orient in ("u", "v"):
        for base in ("cross_sum", "cross_sum_aux", "cross_sum_first_coord", "offdiag_iterate",
                     "offdiag_iterate_aux", "offdiag_diag", "offdiag_diag_aux"):
            assert f"{base}_{orient}" in names
    assert all(r.satisfied for r in rows if r.check_name.startswith("cross_sum_first_coord"))
    assert all(np.isfinite(r.ratio) for r in rows if not r.check_name.startswith("cross_sum_first"))
    assert max(r.t for r in rows) <= cfg.horizon
    # the cross-sum row equals the direct formula on the first column
    A = op.matrices()
    col = A[:, :, 0].copy()
    col[:, 0] = 0
    direct = np.linalg.norm(A[:, 0, 0] @ col) / op.dims.m
    (row,) = [r for r in rows if r.check_name == "cross_sum_u"]
    assert row.lhs == pytest.approx(direct, rel=1e-12)


def test_concentration_needs_dense_and_canonical(key):
    op, aux, v0, _ = diagnostic_problem(ProblemDims(6, 6, 40), 7, memory_budget=0)
    cp = coupled_run(op, aux, v0, als.StopRule(2))
    with pytest.raises(NotSupportedInStreamedMode):
        check_concentration_bounds(op, aux, cp)
    plain = build_operator(ProblemDims(6, 6, 40), key)
    with pytest.raises(CanonicalFrameRequired):
        check_concentration_bounds(plain, aux, cp)


def test_cross_sum_monte_carlo():
    # only A_i[:, 0] enters, so generate that column directly from the measurement lane
    n1, m = 64, 4096
    held = 0
    for t in range(50):
        col = gaussian_grid(13, Lane.MEASUREMENT, t, np.arange(m), np.arange(n1), 1)[:, :, 0]
        a11 = col[:, 0].copy()
        col[:, 0] = 0
        held += np.linalg.norm(a11 @ col) / m <= 4 * math.sqrt(n1 / m)
    assert held >= 48


def test_first_column_matches_operator():
    op = build_operator(ProblemDims(5, 4, 30), StreamKey(13, Lane.MEASUREMENT, 3))
    col = gaussian_grid(13, Lane.MEASUREMENT, 3, np.arange(30), np.arange(5), 1)[:, :, 0]
    assert np.array_equal(col, op.matrices()[:, :, 0])


# -- end to end -------------------------------------------------------------------------

def test_diagnose_report_and_csv():
    rep = diagnose(ProblemDims(16, 16, 256), 3, cfg=DiagConfig(rip_samples=30, horizon=3), stop=als.StopRule(8))
    names = {r.check_name for r in rep.rows}
    assert {"rip_delta_hat", "closeness_u", "closeness_v", "normal_equation", "perp_decrease_perp",
            "cross_sum_u", "offdiag_iterate_v"} <= names
    assert all(r.satisfied for r in rep.rows if r.check_name == "normal_equation")
    text = write_diag_csv(rep.rows, header_lines=["seed: 3"])
    lines = text.splitlines()
    assert lines[1] == DIAG_HEADER
    assert all(len(line.split(",")) == 6 for line in lines[1:])
    assert text == write_diag_csv(diagnose(ProblemDims(16, 16, 256), 3, cfg=DiagConfig(rip_samples=30, horizon=3),
                                           stop=als.StopRule(8)).rows, header_lines=["seed: 3"])


def test_diag_config_validation():
    for kw in (dict(horizon=0), dict(eta=1.0), dict(rip_samples=0), dict(constant=0.0)):
        with pytest.raises(InvalidParameters):
            DiagConfig(**kw)
