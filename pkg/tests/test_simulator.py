"""Event-loop behavior, conservation, and agreement with the closed forms."""

import math
from dataclasses import replace

import numpy as np
import pytest

from gfdelay import fbl, queueing, simulator
from gfdelay.blocklength import BlocklengthMatrix
from gfdelay.simulator import (
    SimConfig,
    analytic_delay_reference,
    empirical_vs_analytic_report,
    simulate,
)


def uniform_schedule(cfg, symbols=1000.0):
    return BlocklengthMatrix.constant(symbols, cfg.k_users, cfg.q_th, cfg.w_hz)


def test_single_packet_trivial_delay(ref_cfg):
    # one pre-queued packet, no arrivals, no contention, negligible error:
    # success on the first attempt and access delay exactly one slot
    cfg = replace(ref_cfg, k_users=1, b_bits=1e-9, lambda_rate=0.0)
    sc = SimConfig.from_system(
        cfg, uniform_schedule(cfg), horizon=50, seed=0, initial_queue=1
    )
    stats = simulate(sc)
    assert stats.delivered.sum() == 1
    assert stats.retx_mean[0, 1] == 1.0
    slot = 1000.0 / cfg.w_hz + cfg.d_p_s
    assert stats.queuing.mean_ms == 0.0
    assert stats.transmission.mean_ms == slot * 1e3
    assert stats.access.mean_ms == slot * 1e3


def test_determinism_bit_for_bit(small_cfg):
    sc = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg), horizon=3000, seed=7)
    a, b = simulate(sc), simulate(sc)
    assert np.array_equal(a.attempts, b.attempts)
    assert np.array_equal(a.successes, b.successes)
    assert np.array_equal(a.queue_hist, b.queue_hist)
    assert a.access.mean_ms == b.access.mean_ms
    assert a.access.p99_ms == b.access.p99_ms
    c = simulate(SimConfig.from_system(small_cfg, uniform_schedule(small_cfg), horizon=3000, seed=8))
    assert not np.array_equal(a.successes, c.successes)


def test_packet_conservation_exact(small_cfg):
    for seed in (1, 2, 3):
        sc = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg), horizon=2500, seed=seed)
        st = simulate(sc)
        assert np.array_equal(
            st.generated, st.delivered + st.dropped_cr + st.dropped_overflow + st.still_queued
        )


def test_queue_never_exceeds_cap(small_cfg):
    cfg = replace(small_cfg, lambda_rate=5.0)  # heavy load
    sc = SimConfig.from_system(cfg, uniform_schedule(cfg), horizon=2000, seed=3)
    st = simulate(sc)
    assert st.max_queue_seen <= cfg.q_th
    assert st.dropped_overflow.sum() > 0


def test_replications_merge_and_change_results(small_cfg):
    sc1 = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg), horizon=1000, seed=5)
    sc3 = SimConfig.from_system(
        small_cfg, uniform_schedule(small_cfg), horizon=1000, seed=5, replications=3
    )
    st1, st3 = simulate(sc1), simulate(sc3)
    assert st3.slots == 3 * st1.slots
    assert st3.attempts.sum() > st1.attempts.sum()


def test_full_contention_matches_model(ref_cfg):
    # the per-user chain is exactly the analytic one in full-contention mode
    sc = SimConfig.from_system(ref_cfg, uniform_schedule(ref_cfg), horizon=20000, seed=2)
    st = simulate(sc)
    assert st.mean_contenders == ref_cfg.k_users
    rep = empirical_vs_analytic_report(st, sc)
    assert rep.gates.retx_ok and rep.gates.tv_ok
    assert rep.gates.max_abs_z < 4.5  # the strict 3-sigma gate runs at 1e5 slots


def test_backlogged_contention_realized_prediction(ref_cfg):
    # saturated regime with errors disabled: success rate tracks the
    # prediction computed from the realized number of contenders
    cfg = replace(ref_cfg, k_users=10, m_pre=10, b_bits=1e-9, lambda_rate=3.0,
                  sim=replace(ref_cfg.sim, contention="backlogged"))
    sc = SimConfig.from_system(cfg, uniform_schedule(cfg), horizon=20000, seed=4)
    st = simulate(sc)
    assert st.mean_contenders >= 0.8 * cfg.k_users
    n_att = st.attempts.sum()
    emp = st.successes.sum() / n_att
    pred = float(np.nansum(st.collision_free_pred_mean * st.attempts) / n_att)
    se = math.sqrt(pred * (1.0 - pred) / n_att)
    assert abs(emp - pred) <= 3.0 * se
    # and the fixed-contender formula overstates collisions at finite load
    assert emp >= fbl.collision_avoidance_prob(cfg.k_users, cfg.m_pre)


def test_cr_timer_drops(small_cfg):
    # certain outage: every packet burns its retransmission budget and drops
    cfg = replace(small_cfg, b_bits=5000.0)
    n = uniform_schedule(cfg, 100.0)
    sc = SimConfig.from_system(cfg, n, horizon=1500, seed=6, cr_max_retx=3)
    st = simulate(sc)
    assert st.delivered.sum() == 0
    assert st.dropped_cr.sum() > 0
    assert np.array_equal(
        st.generated, st.delivered + st.dropped_cr + st.dropped_overflow + st.still_queued
    )


def test_exact_error_mode_differs(small_cfg):
    sc_lin = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg, 300.0),
                                   horizon=4000, seed=9)
    sc_exact = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg, 300.0),
                                     horizon=4000, seed=9, exact_error=True)
    st_lin, st_exact = simulate(sc_lin), simulate(sc_exact)
    assert st_lin.successes.sum() != st_exact.successes.sum()


def test_analytic_reference_matches_shared_evaluator(ref_cfg):
    for tti in (1.0, 0.5):
        n = BlocklengthMatrix.from_tti_ms(tti, ref_cfg.k_users, ref_cfg.q_th, ref_cfg.w_hz)
        ref = analytic_delay_reference(ref_cfg, n)
        bd = queueing.average_access_delay(n, ref_cfg)
        assert np.max(np.abs(ref["access_ms"] - bd.access_ms)) <= 1e-12 * max(
            1.0, float(np.max(np.abs(bd.access_ms)))
        )
        assert ref["average_access_ms"] == pytest.approx(bd.average_access_ms, rel=1e-12)


def test_report_flags_corrupted_analytic(small_cfg):
    sc = SimConfig.from_system(small_cfg, uniform_schedule(small_cfg), horizon=4000, seed=2)
    st = simulate(sc)
    eps = fbl.packet_error_prob(sc.n.n, small_cfg.b_bits, small_cfg.channel())
    p_suc = (1.0 - eps) * fbl.collision_avoidance_prob(small_cfg.k_users, small_cfg.m_pre)
    clean = empirical_vs_analytic_report(st, sc)
    corrupted = empirical_vs_analytic_report(st, sc, analytic={"p_suc": p_suc + 0.15})
    assert not corrupted.gates.success_ok
    assert len(corrupted.flagged()) > len(clean.flagged())


def test_report_zero_z_on_exact_match(ref_cfg):
    # deterministic degenerate run: a single user with one certain success
    cfg = replace(ref_cfg, k_users=1, b_bits=1e-9, lambda_rate=0.0)
    sc = SimConfig.from_system(cfg, uniform_schedule(cfg), horizon=5, seed=0, initial_queue=1)
    st = simulate(sc)
    rep = empirical_vs_analytic_report(st, sc)
    succ_rows = [r for r in rep.rows if r["quantity"] == "success_prob"]
    assert len(succ_rows) == 1
    assert abs(succ_rows[0]["z"]) < 3


def test_sim_config_validation(small_cfg):
    n = uniform_schedule(small_cfg)
    with pytest.raises(ValueError):
        SimConfig.from_system(small_cfg, n, horizon=0)
    with pytest.raises(ValueError):
        SimConfig.from_system(small_cfg, n, contention="sometimes")
    with pytest.raises(ValueError):
        SimConfig.from_system(small_cfg, BlocklengthMatrix(n.n + 0.25, small_cfg.w_hz))
    wrong = BlocklengthMatrix.constant(100, small_cfg.k_users + 1, small_cfg.q_th, small_cfg.w_hz)
    with pytest.raises(ValueError):
        SimConfig.from_system(small_cfg, wrong)
