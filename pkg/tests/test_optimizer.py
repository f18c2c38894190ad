"""Optimizer components and the alternating loop on small instances."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from gfdelay import optimizer, queueing
from gfdelay.blocklength import BlocklengthMatrix
from gfdelay.optimizer import (
    alternating_optimize,
    augmented_lagrangian,
    admm_block_solve,
    penalized_objective,
    rate_constraint_slack,
    OptimizerState,
    _block_context,
    _Evaluator,
    _x_update,
)


def micro_cfg(ref_cfg, k_users=1, q_th=1, **kw):
    return replace(ref_cfg, k_users=k_users, q_th=q_th, **kw)


def make_state(cfg, n=None):
    n = n or BlocklengthMatrix.from_tti_ms(
        cfg.opt.init_tti_ms, cfg.k_users, cfg.q_th, cfg.w_hz
    )
    ev = _Evaluator(cfg)
    f0 = ev.objective(n.n)
    tau = cfg.opt.tau * f0 / (cfg.k_users * (cfg.w_hz * cfg.opt.init_tti_ms * 1e-3) ** 2)
    return OptimizerState(n=n.copy(), tau_q=tau, omega=cfg.opt.omega, trace=[f0])


# --- constraint slack --------------------------------------------------------


def test_slack_zero_demand(ref_cfg):
    cfg = replace(ref_cfg, lambda_rate=0.0)
    slack = rate_constraint_slack(np.full(cfg.q_th + 1, 1000.0), cfg)
    assert slack > 0.0


def test_slack_reference_schedule_positive(ref_cfg):
    # direct recomputation of both sums
    row = np.full(ref_cfg.q_th + 1, 1000.0)
    cfg = replace(ref_cfg, lambda_rate=0.2)
    slack = rate_constraint_slack(row, cfg)
    from gfdelay import fbl

    ch = cfg.channel()
    eps = np.clip(fbl.packet_error_prob(row, cfg.b_bits, ch), 1e-12, 1 - 1e-12)
    supply = float(np.sum(fbl.achievable_rate(row, ch.snr_avg, eps) * row))
    tp = cfg.traffic()
    demand = cfg.b_bits * sum(a * queueing.poisson_pmf(tp, a) for a in range(cfg.q_th + 1))
    assert slack == pytest.approx(supply - demand, rel=1e-12)
    assert slack > 0.0


def test_slack_monotone_where_finite_difference_confirms(ref_cfg):
    cfg = replace(ref_cfg, q_th=2)
    grid = np.arange(400.0, 3000.0, 200.0)
    for base in (600.0, 1200.0):
        row = np.full(3, base)
        s0 = rate_constraint_slack(row, cfg)
        for q in range(3):
            for step in grid:
                bumped = row.copy()
                bumped[q] = base + step
                s1 = rate_constraint_slack(bumped, cfg)
                assert s1 > s0  # rate * n increasing on this grid


def test_fixed_eps_override(ref_cfg):
    row = np.full(ref_cfg.q_th + 1, 800.0)
    cfg_fixed = replace(ref_cfg, opt=replace(ref_cfg.opt, fixed_eps=1e-5))
    assert rate_constraint_slack(row, cfg_fixed) != rate_constraint_slack(row, ref_cfg)
    assert rate_constraint_slack(row, ref_cfg, eps=1e-5) == pytest.approx(
        rate_constraint_slack(row, cfg_fixed), rel=1e-12
    )


# --- penalized objective -----------------------------------------------------


def test_penalty_vanishes_when_feasible(ref_cfg):
    n = BlocklengthMatrix.from_tti_ms(1.0, ref_cfg.k_users, ref_cfg.q_th, ref_cfg.w_hz)
    pen = penalized_objective(n, ref_cfg)
    plain = queueing.average_access_delay(n, ref_cfg).average_access_ms * 1e-3
    assert pen == plain


def test_penalty_quadratic_in_violation(ref_cfg):
    # a pinned error probability keeps the rate formula honest at tiny n,
    # so a large demand forces negative slack there
    cfg = replace(
        ref_cfg,
        k_users=2,
        q_th=1,
        lambda_rate=0.9,
        b_bits=200.0,
        opt=replace(ref_cfg.opt, fixed_eps=1e-3),
    )
    n = BlocklengthMatrix.constant(40.0, 2, 1, cfg.w_hz)
    ev = _Evaluator(cfg)
    slacks = ev.slacks(n.n)
    assert np.all(slacks < 0)
    plain = queueing.average_access_delay(n, cfg).average_access_ms * 1e-3
    pen1 = penalized_objective(n, cfg, omega=cfg.opt.omega)
    assert pen1 == pytest.approx(plain + cfg.opt.omega * np.sum(slacks**2), rel=1e-12)
    pen2 = penalized_objective(n, cfg, omega=2 * cfg.opt.omega)
    assert pen2 - plain == pytest.approx(2 * (pen1 - plain), rel=1e-12)


# --- augmented Lagrangian ----------------------------------------------------


def test_lagrangian_recomposition(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=3, q_th=2)
    state = make_state(cfg)
    ctx = _block_context(state.n.n, 1, _Evaluator(cfg), state.tau_q)
    rng = np.random.default_rng(5)
    x = rng.uniform(100, 2000, 3)
    y = rng.uniform(100, 2000, 3)
    lam = rng.normal(0, 1e-7, 3)
    got = augmented_lagrangian(x, y, lam, state.tau_q, ctx)
    u = float(ctx.u_per_user(x).sum())
    v = float((ctx.block_scores(y) - ctx.u_per_user(y)).sum())
    expect = u + v + float(np.dot(lam, x - y)) + 0.5 * state.tau_q * float(np.dot(x - y, x - y))
    assert got == pytest.approx(expect, rel=1e-12)


def test_lagrangian_consensus_point(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=2, q_th=1)
    state = make_state(cfg)
    ctx = _block_context(state.n.n, 0, _Evaluator(cfg), state.tau_q)
    y = np.array([700.0, 900.0])
    got = augmented_lagrangian(y, y, np.zeros(2), state.tau_q, ctx)
    assert got == pytest.approx(float(ctx.block_scores(y).sum()), rel=1e-12)


def test_x_update_exact_against_dense_scan(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=4, q_th=1, b_bits=300.0, lambda_rate=0.8)
    state = make_state(cfg)
    ev = _Evaluator(cfg)
    ctx = _block_context(state.n.n, 1, ev, state.tau_q)
    rng = np.random.default_rng(3)
    y = rng.uniform(10, 3000, 4)
    lam = rng.normal(0, 1e-6, 4)
    x = _x_update(y, lam, ctx)
    assert np.all(x >= 0)

    def phi(k, z):
        hinge = min(ctx.rhat[k] * z + ctx.s[k], 0.0)
        return (
            (ctx.c[k] + lam[k]) * z
            + ev.omega * hinge**2
            + 0.5 * ctx.tau * (z - y[k]) ** 2
        )

    for k in range(4):
        zs = np.linspace(0.0, 6000.0, 600001)
        hinge = np.minimum(ctx.rhat[k] * zs + ctx.s[k], 0.0)
        vals = (ctx.c[k] + lam[k]) * zs + ev.omega * hinge**2 + 0.5 * ctx.tau * (zs - y[k]) ** 2
        assert phi(k, x[k]) <= vals.min() + 1e-18


# --- block solve ---------------------------------------------------------------


def test_block_solve_fixed_point(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=2, q_th=1)
    state = make_state(cfg)
    x, y, lam, info = admm_block_solve(0, state, cfg)
    assert info.converged
    # restart at the converged consensus point with the stationary multiplier
    # for the refreshed context: the solve stops immediately, x does not move,
    # and y wiggles only below the inner tolerance scale
    state.n.n[:, 0] = y
    ctx = _block_context(state.n.n, 0, _Evaluator(cfg), state.tau_q)
    obj_before = float(ctx.block_scores(y).sum())
    x2, y2, lam2, info2 = admm_block_solve(0, state, cfg, x0=y, y0=y, lam0=-ctx.c)
    assert info2.inner_iters == 1 and info2.converged
    assert np.array_equal(x2, y)
    assert np.max(np.abs(y2 - y)) <= 5e-3 * np.max(np.abs(y))
    obj_after = float(ctx.block_scores(y2).sum())
    assert abs(obj_after - obj_before) <= 10 * cfg.opt.tol_inner


def test_block_solve_reports_consensus_gap(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=2, q_th=1)
    state = make_state(cfg)
    _, _, _, info = admm_block_solve(1, state, cfg)
    assert info.consensus_gap == info.residuals[-1]
    # the gap at the L-tolerance stop is small against the blocklength scale
    assert info.consensus_gap < 0.05 * float(np.max(state.y_q))


def test_block_solve_scalar_golden_oracle(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=1, q_th=0)
    res = alternating_optimize(cfg)

    def f(v):
        return penalized_objective(BlocklengthMatrix(np.array([[v]]), cfg.w_hz), cfg)

    sol = minimize_scalar(f, bounds=(1.0, 1e5), method="bounded", options={"xatol": 1e-8})
    assert res.objective == pytest.approx(sol.fun, rel=0.01)


def test_block_residual_decreases_statistically(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=2, q_th=1)
    rng = np.random.default_rng(99)
    settled = 0
    runs = 100
    for _ in range(runs):
        n0 = BlocklengthMatrix(rng.uniform(50, 4000, (2, 2)), cfg.w_hz)
        state = make_state(cfg, n=n0)
        _, _, _, info = admm_block_solve(int(rng.integers(0, 2)), state, cfg)
        res = info.residuals
        if len(res) < 11 or res[-1] <= res[-11] * (1 + 1e-9):
            settled += 1
    assert settled >= 90, f"residual settled in only {settled}/{runs} runs"


# --- alternating loop ----------------------------------------------------------


def test_trivial_instance_trace_constant(ref_cfg):
    cfg = micro_cfg(ref_cfg, k_users=1, q_th=1, lambda_rate=0.0)
    res = alternating_optimize(cfg)
    assert res.converged
    # after the first sweep the trace only polishes below the inner tolerance
    tail = res.trace[1:]
    assert np.max(tail) - np.min(tail) <= 10 * cfg.opt.tol_inner * (cfg.q_th + 1)


def test_trace_non_increasing_and_feasible_iterates(small_cfg):
    res = alternating_optimize(small_cfg)
    assert res.converged
    assert np.all(np.diff(res.trace) <= 0.0)
    assert np.all(res.n_opt.n >= 0)
    assert np.all(res.state.x_q >= 0)
    assert res.feasible and np.all(res.slacks >= 0)


def test_objective_beats_baselines(small_cfg):
    res = alternating_optimize(small_cfg)
    for tti in small_cfg.baseline_ttis_ms:
        nb = BlocklengthMatrix.from_tti_ms(tti, small_cfg.k_users, small_cfg.q_th, small_cfg.w_hz)
        base = queueing.average_access_delay(nb, small_cfg).average_access_ms * 1e-3
        assert res.objective <= base + 1e-12


def test_schedule_varies_by_packet_index(small_cfg):
    res = alternating_optimize(small_cfg)
    assert np.ptp(res.n_opt.n[0]) > 1.0


def test_penalized_equals_plain_at_feasible_end(small_cfg):
    res = alternating_optimize(small_cfg)
    assert res.feasible
    assert res.objective == res.objective_unpenalized


def test_reproducible_bit_identical(small_cfg):
    r1 = alternating_optimize(small_cfg)
    r2 = alternating_optimize(small_cfg)
    assert np.array_equal(r1.trace, r2.trace)
    assert np.array_equal(r1.n_opt.n, r2.n_opt.n)
    assert [rec.lagrangian for rec in r1.records] == [rec.lagrangian for rec in r2.records]


def test_warm_start_vs_reset(small_cfg):
    warm = alternating_optimize(small_cfg)
    cfg_reset = replace(small_cfg, opt=replace(small_cfg.opt, warm_start=False))
    reset = alternating_optimize(cfg_reset)
    # a reset sweep repeats the first sweep exactly, so it converges right after
    assert reset.converged and len(reset.trace) == 3
    assert reset.trace[1] == pytest.approx(reset.trace[2], abs=1e-15)
    assert warm.objective <= reset.objective + small_cfg.opt.tol_outer


def test_initial_schedule_validation(small_cfg):
    bad = BlocklengthMatrix(np.zeros((small_cfg.k_users, small_cfg.q_th + 1)), small_cfg.w_hz)
    with pytest.raises(ValueError):
        alternating_optimize(small_cfg, n0=bad)
    wrong_shape = BlocklengthMatrix.constant(500.0, 2, 1, small_cfg.w_hz)
    with pytest.raises(ValueError):
        alternating_optimize(small_cfg, n0=wrong_shape)


def test_rounding_reported_not_applied(small_cfg):
    res = alternating_optimize(small_cfg)
    assert np.any(res.n_opt.n != np.rint(res.n_opt.n))
    rounded = res.n_opt.rounded()
    assert np.all(rounded.n == np.rint(rounded.n)) and np.all(rounded.n >= 1)
    assert res.objective_rounded == pytest.approx(res.objective, rel=1e-3)


def test_trace_records_cover_all_blocks(small_cfg):
    res = alternating_optimize(small_cfg)
    sweeps = len(res.trace) - 1
    assert len(res.records) == sweeps * (small_cfg.q_th + 1)
    assert [(r.outer, r.block) for r in res.records[: small_cfg.q_th + 1]] == [
        (1, q) for q in range(small_cfg.q_th + 1)
    ]
