import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rials import als
from rials.diagnostics import isotropic_oracle
from rials.errors import DegenerateIterate, DimensionMismatch, IllConditionedSubproblem, InvalidParameters
from rials.rand_stream import Lane, StreamKey, sphere_sample
from rials.sensing import ProblemDims, build_operator


def planted(n1, n2, m, trial=0, seed=41, storage=None, scale_u=1.0):
    key = StreamKey(seed, Lane.MEASUREMENT, trial)
    op = build_operator(ProblemDims(n1, n2, m), key, storage=storage)
    u = scale_u * sphere_sample(StreamKey(seed, Lane.TRIAL, trial, 0), n1)
    v = sphere_sample(StreamKey(seed, Lane.TRIAL, trial, 1), n2)
    v0 = sphere_sample(StreamKey(seed, Lane.INIT, trial), n2)
    return op, (u, v), op.forward_rank1(u, v), v0


def pinv_u(op, y, v):
    B = np.array([A @ v for A in op.matrices()]) / math.sqrt(op.dims.m)
    return np.linalg.pinv(B) @ y


def pinv_v(op, y, u):
    B = np.array([A.T @ u for A in op.matrices()]) / math.sqrt(op.dims.m)
    return np.linalg.pinv(B) @ y


# -- small pieces ------------------------------------------------------------------

def test_angle_metrics_examples():
    e = np.eye(3)
    assert als.angle_metrics(e[0], e[0]) == (0.0, 1.0)
    s, c = als.angle_metrics(e[1], e[0])
    assert (s, c) == (1.0, 0.0)
    w = np.ones(3) / np.sqrt(3)
    s, c = als.angle_metrics(w, e[0])
    assert c == pytest.approx(1 / np.sqrt(3), abs=1e-15)
    assert s == pytest.approx(np.sqrt(2 / 3), abs=1e-15)


def test_angle_metrics_block():
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    assert als.angle_metrics(Q, Q) == pytest.approx((0.0, 1.0), abs=1e-12)
    s, c = als.angle_metrics(Q[:, :1], Q[:, 1:])
    assert s == pytest.approx(1.0) and c == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DimensionMismatch):
        als.angle_metrics(Q, Q[:, :1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_angle_pythagoras(xs):
    w = np.array(xs)
    if np.linalg.norm(w) < 1e-3:
        return
    w = w / np.linalg.norm(w)
    s, c = als.angle_metrics(w, np.eye(len(w))[0])
    assert abs(s * s + c * c - 1.0) <= 1e-12


def test_normalize_examples(rng):
    e = np.eye(4)[1]
    assert np.array_equal(als.normalize(e), e)
    assert np.array_equal(als.normalize(2 * np.eye(4)[0]), np.eye(4)[0])
    assert abs(np.linalg.norm(als.normalize(rng.standard_normal(50))) - 1) <= 1e-14
    with pytest.raises(DegenerateIterate):
        als.normalize(np.zeros(3))
    with pytest.raises(DegenerateIterate):
        als.normalize(np.full(3, 1e-301))


def test_orthonormalize_sign_fixed(rng):
    W = rng.standard_normal((7, 3))
    Q = als.orthonormalize(W)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-14)
    assert np.all(np.diag(Q.T @ W) > 0)
    w = rng.standard_normal((7, 1))
    assert np.allclose(als.orthonormalize(w)[:, 0], als.normalize(w[:, 0]), atol=1e-15)
    with pytest.raises(DegenerateIterate):
        als.orthonormalize(np.column_stack([w[:, 0], 2 * w[:, 0]]))


def test_stop_rule_default_and_validation():
    n2 = 256
    expected = math.ceil(10 * (math.log(n2) + math.log(1e8)) / math.log(math.log(n2)))
    assert als.StopRule.default(n2).max_iters == expected
    assert als.StopRule.default(n2).residual_tol == 1e-10
    # log log n2 < 1 is floored at 1
    assert als.StopRule.default(8).max_iters == math.ceil(10 * (math.log(8) + math.log(1e8)))
    with pytest.raises(InvalidParameters):
        als.StopRule(0)
    with pytest.raises(InvalidParameters):
        als.StopRule(5, residual_tol=-1)


# -- least squares -----------------------------------------------------------------

def test_ls_updates_under_oracle(rng):
    n = 7
    op = isotropic_oracle(ProblemDims(n, n, n * n))
    u_s, v_s = als.normalize(rng.standard_normal(n)), als.normalize(rng.standard_normal(n))
    y = op.forward_rank1(u_s, v_s)
    v = als.normalize(rng.standard_normal(n))
    u = als.normalize(rng.standard_normal(n))
    assert np.allclose(als.ls_update_u(op, y, v), (v_s @ v) * u_s, atol=1e-12)
    assert np.allclose(als.ls_update_v(op, y, u), (u_s @ u) * v_s, atol=1e-12)


def test_ls_matches_pinv_oracle(rng):
    op, (u_s, v_s), y, _ = planted(6, 5, 40)
    v = als.normalize(rng.standard_normal(5))
    u = als.normalize(rng.standard_normal(6))
    a, b = als.ls_update_u(op, y, v), pinv_u(op, y, v)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)
    a, b = als.ls_update_v(op, y, u), pinv_v(op, y, u)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)


def test_ls_normal_equation_residual(rng):
    op, _, y, _ = planted(20, 15, 120)
    v = als.normalize(rng.standard_normal(15))
    u = als.ls_update_u(op, y, v)
    B = op.left_design(v)
    assert np.linalg.norm(B.T @ (y - B @ u)) <= 1e-8 * np.linalg.norm(B.T @ y)


def test_exact_recovery_from_true_direction():
    op, (u_s, v_s), y, _ = planted(16, 12, 60)
    assert np.linalg.norm(als.ls_update_u(op, y, v_s) - u_s) <= 1e-8
    assert np.linalg.norm(als.ls_update_v(op, y, u_s) - v_s) <= 1e-8


def test_underdetermined_subproblem_raises():
    op, _, y, v0 = planted(10, 10, 6)
    with pytest.raises(IllConditionedSubproblem):
        als.ls_update_u(op, y, v0)


def test_cg_fallback_on_moderate_conditioning(rng):
    U, _ = np.linalg.qr(rng.standard_normal((80, 10)))
    B = U * np.logspace(0, -3.5, 10)  # Gram condition 1e7, between the two switches
    x_true = rng.standard_normal(10)
    y = B @ x_true
    x = als.solve_least_squares(B, y)
    assert np.linalg.norm(x - x_true) <= 1e-6 * np.linalg.norm(x_true)
    xc = als.cgls(B, y)
    assert np.linalg.norm(xc - x_true) <= 1e-6 * np.linalg.norm(x_true)


def test_severely_ill_conditioned_rejected(rng):
    U, _ = np.linalg.qr(rng.standard_normal((30, 4)))
    B = U * np.array([1.0, 1.0, 1.0, 1e-7])
    with pytest.raises(IllConditionedSubproblem):
        als.solve_least_squares(B, rng.standard_normal(30))


# -- full runs ---------------------------------------------------------------------

def test_oracle_converges_in_one_iteration(rng):
    n = 9
    op = isotropic_oracle(ProblemDims(n, n, n * n))
    u_s, v_s = rng.standard_normal(n), als.normalize(rng.standard_normal(n))
    y = op.forward_rank1(u_s, v_s)
    state, traj = als.als_run(op, y, als.normalize(rng.standard_normal(n)), als.StopRule(5), truth=(u_s, v_s))
    assert len(traj) == 2
    assert traj.records[1].sin_v <= 1e-10 and traj.records[1].sin_u <= 1e-10
    assert als.reconstruct(state, (u_s, v_s))[1] <= 1e-10


def test_orthogonal_start_under_oracle_degenerates():
    n = 5
    op = isotropic_oracle(ProblemDims(n, n, n * n))
    e = np.eye(n)
    y = op.forward_rank1(e[0], e[0])
    with pytest.raises(DegenerateIterate) as info:
        als.als_run(op, y, e[1], als.StopRule(3), truth=(e[0], e[0]))
    assert info.value.trajectory.status == "DegenerateIterate"
    assert len(info.value.trajectory) == 1


def test_run_invariants():
    op, truth, y, v0 = planted(24, 24, 150, trial=3)
    state, traj = als.als_run(op, y, v0, als.StopRule(40), truth=truth)
    ts = traj.column("t")
    assert np.all(np.diff(ts) > 0)
    for r in traj.records:
        assert abs(r.sin_v**2 + r.cos_v**2 - 1) <= 1e-12
        if r.t:
            assert abs(r.sin_u**2 + r.cos_u**2 - 1) <= 1e-12
            assert r.phase in ("phase1", "phase2")
    assert abs(np.linalg.norm(state.u) - 1) <= 1e-14 and abs(np.linalg.norm(state.v) - 1) <= 1e-14
    # every half-step is an exact block minimizer, so the objective never increases
    res = np.array(traj.half_residuals)
    assert np.all(res[1:] <= res[:-1] + 1e-10 * max(1.0, res[0]))
    # phase labels switch once, at the first cos_v >= 1 / ln n2
    thr = 1 / math.log(24)
    first = next(r.t for r in traj.records if r.cos_v >= thr)
    assert all((r.phase == "phase2") == (r.t >= first) for r in traj.records)


def test_sign_invariance():
    op, truth, y, v0 = planted(16, 16, 100, trial=5)
    s1, t1 = als.als_run(op, y, v0, als.StopRule(15), truth=truth)
    s2, t2 = als.als_run(op, y, -v0, als.StopRule(15), truth=truth)
    assert np.allclose(s1.u, -s2.u, atol=1e-12) and np.allclose(s1.v, -s2.v, atol=1e-12)
    for a, b in zip(t1.records, t2.records):
        assert a.sin_v == pytest.approx(b.sin_v, abs=1e-12) and a.cos_v == pytest.approx(b.cos_v, abs=1e-12)


def test_dense_and_streamed_trajectories_agree():
    args = (14, 12, 110, 2)
    op_d, truth, y, v0 = planted(*args, storage="dense")
    op_s, _, _, _ = planted(*args, storage="streamed")
    _, td = als.als_run(op_d, y, v0, als.StopRule(20), truth=truth)
    _, ts = als.als_run(op_s, y, v0, als.StopRule(20), truth=truth)
    assert len(td) == len(ts)
    for a, b in zip(td.records, ts.records):
        for name in ("sin_u", "cos_u", "sin_v", "cos_v", "rel_residual"):
            x, z = getattr(a, name), getattr(b, name)
            assert (math.isnan(x) and math.isnan(z)) or abs(x - z) <= 1e-10


def test_scaled_truth_recovered():
    op, truth, y, v0 = planted(32, 32, 192, trial=1, scale_u=5.0)
    state, _ = als.als_run(op, y, v0, truth=truth)
    _, err = als.reconstruct(state, truth)
    assert err <= 1e-6


def test_reconstruct_needs_an_iteration():
    with pytest.raises(InvalidParameters):
        als.reconstruct(als.FactorState(u=np.ones(2), v=np.ones(2)))


def test_input_validation():
    op, truth, y, v0 = planted(6, 6, 30)
    with pytest.raises(InvalidParameters):
        als.als_run(op, y, 2 * v0)
    with pytest.raises(DimensionMismatch):
        als.als_run(op, y, v0[:5])
    with pytest.raises(DimensionMismatch):
        als.als_run(op, y[:5], v0)
    with pytest.raises(InvalidParameters):
        als.als_run_rank_r(op, y, np.ones((6, 2)))


def test_rank_r_with_r1_matches_rank_one():
    op, truth, y, v0 = planted(12, 10, 80, trial=4)
    s1, t1 = als.als_run(op, y, v0, als.StopRule(12), truth=truth)
    sr, tr = als.als_run_rank_r(op, y, v0[:, None], als.StopRule(12),
                                truth=(truth[0][:, None], truth[1][:, None]))
    assert len(t1) == len(tr)
    for a, b in zip(t1.records, tr.records):
        assert a.sin_v == pytest.approx(b.sin_v, abs=1e-10) and a.cos_v == pytest.approx(b.cos_v, abs=1e-10)
    assert np.allclose(als.reconstruct(s1), als.reconstruct(sr), atol=1e-10)


def test_rank_r_oracle_one_iteration(rng):
    n = 8
    op = isotropic_oracle(ProblemDims(n, n, n * n, rank=2))
    U, V = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    y = op.forward(U @ V.T)
    V0 = als.orthonormalize(rng.standard_normal((n, 2)))
    state, traj = als.als_run_rank_r(op, y, V0, als.StopRule(3), truth=(U, V))
    assert traj.records[1].sin_v <= 1e-8 and traj.records[1].sin_u <= 1e-8
    assert als.reconstruct(state, (U, V))[1] <= 1e-10


def test_trajectory_csv_format_and_determinism():
    op, truth, y, v0 = planted(10, 10, 60, trial=6)
    _, t1 = als.als_run(op, y, v0, als.StopRule(8), truth=truth)
    _, t2 = als.als_run(op, y, v0, als.StopRule(8), truth=truth)
    text = t1.to_csv(header_lines=["seed: 41"])
    assert text == t2.to_csv(header_lines=["seed: 41"])
    lines = text.splitlines()
    assert lines[0] == "# seed: 41" and lines[1] == als.TRAJECTORY_HEADER
    row = lines[3].split(",")
    assert len(row) == 7 and float(row[3]) == t1.records[1].sin_v
