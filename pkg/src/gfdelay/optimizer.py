"""Blocklength optimization by alternating block solves with consensus splitting.

The average access delay is minimized over the K x (Q_th + 1) blocklength
schedule subject to a per-user deliverable-bits constraint. The constraint is
moved into the objective as a squared-hinge penalty; each packet-index block
(one column of the schedule, all users) is then solved with an augmented
Lagrangian on consensus variables: a convex frozen-coefficient model u(x)
(linear delay slope plus the penalty with the rate frozen) carries the
constrained x-update in closed form, and the full nonconvex remainder v(y)
is minimized per user by golden-section search. Multiplier ascent ties the
two together; an accept step keeps the outer objective trace non-increasing.

Everything here is deterministic: no randomness enters, so identical configs
and starting points produce bit-identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fbl, queueing
from .blocklength import BlocklengthMatrix
from .config import SystemConfig

# error probabilities are clamped away from {0, 1} before entering the rate
# formula, whose Gaussian-tail inverse diverges at the endpoints
_EPS_CLAMP = 1e-12

GOLDEN_LOWER = 1.0  # smallest blocklength probed by the y-search (symbols)


class MonotonicityError(RuntimeError):
    """The accepted objective trace increased beyond numerical slack."""


@dataclass
class OptimizerState:
    """Live optimizer state: schedule, split variables, and counters."""

    n: BlocklengthMatrix
    tau_q: float
    omega: float
    x_q: np.ndarray | None = None
    y_q: np.ndarray | None = None
    lambda_q: np.ndarray | None = None
    outer_iter: int = 0
    block: int = 0
    inner_iter: int = 0
    trace: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class BlockSolveInfo:
    inner_iters: int
    lagrangian: float
    consensus_gap: float
    converged: bool
    residuals: tuple[float, ...]


@dataclass(frozen=True)
class BlockRecord:
    """One row of the optimization trace CSV."""

    outer: int
    block: int
    inner_iters: int
    lagrangian: float
    objective: float
    max_violation: float
    consensus_gap: float
    accepted: bool


@dataclass(frozen=True)
class OptimizeResult:
    n_opt: BlocklengthMatrix
    objective: float
    objective_unpenalized: float
    objective_rounded: float
    trace: np.ndarray
    records: tuple[BlockRecord, ...]
    converged: bool
    warning: str | None
    feasible: bool
    slacks: np.ndarray
    state: OptimizerState


class _Evaluator:
    """Caches config-derived constants for repeated objective evaluations."""

    def __init__(self, cfg: SystemConfig, omega: float | None = None):
        self.cfg = cfg
        self.ch = cfg.channel()
        self.p_one = fbl.collision_avoidance_prob(cfg.k_users, cfg.m_pre)
        self.tp = cfg.traffic()
        self.d_p_s = cfg.d_p_s
        self.demand_bits = cfg.b_bits * queueing.expected_truncated_arrivals(self.tp)
        self.omega = cfg.opt.omega if omega is None else omega
        self.snr = self.ch.snr_avg
        self.fixed_eps = cfg.opt.fixed_eps

    def eps(self, nmat: np.ndarray) -> np.ndarray:
        return fbl.packet_error_prob(nmat, self.cfg.b_bits, self.ch)

    def rate(self, nmat: np.ndarray, eps: np.ndarray) -> np.ndarray:
        used = self.fixed_eps if self.fixed_eps is not None else eps
        used = np.clip(used, _EPS_CLAMP, 1.0 - _EPS_CLAMP)
        return fbl.achievable_rate(nmat, self.snr, np.broadcast_to(used, nmat.shape))

    def slacks(self, nmat: np.ndarray, eps: np.ndarray | None = None) -> np.ndarray:
        if eps is None:
            eps = self.eps(nmat)
        return (self.rate(nmat, eps) * nmat).sum(axis=1) - self.demand_bits

    def _parts(self, nmat: np.ndarray) -> tuple[queueing.DelayBreakdown, np.ndarray]:
        eps = self.eps(nmat)
        p_suc = (1.0 - eps) * self.p_one
        bd = queueing.delays_from_success(
            BlocklengthMatrix(nmat, self.cfg.w_hz), p_suc, self.tp, self.d_p_s
        )
        hinge = np.minimum(self.slacks(nmat, eps), 0.0)
        return bd, hinge

    def scores(self, nmat: np.ndarray) -> np.ndarray:
        """Per-user objective share: access delay / K plus the hinge penalty."""
        bd, hinge = self._parts(nmat)
        return bd.access_ms * 1e-3 / self.cfg.k_users + self.omega * hinge**2

    def objective(self, nmat: np.ndarray) -> float:
        """User-average delay plus summed penalty; matches the plain average
        delay exactly (same expression, same path) when every slack is
        non-negative."""
        bd, hinge = self._parts(nmat)
        return bd.average_access_ms * 1e-3 + self.omega * float(np.sum(hinge**2))


def rate_constraint_slack(n_row, cfg: SystemConfig, eps=None) -> float:
    """Deliverable bits minus expected arriving bits for one user row.

    Positive slack means the schedule can carry the expected load. The rate
    is evaluated at the mean SNR with the per-blocklength error expectation
    (or cfg.opt.fixed_eps when set, or the explicit ``eps`` argument).

    Args:
        n_row: blocklengths over q = 0..q_th, all > 0.
        cfg: system configuration.
        eps: optional fixed error probability overriding both defaults.
    """
    row = np.asarray(n_row, dtype=float)
    if np.any(row <= 0):
        raise ValueError("blocklengths must be positive")
    ev = _Evaluator(cfg)
    if eps is not None:
        ev.fixed_eps = float(eps)
    return float(ev.slacks(row[None, :])[0])


def penalized_objective(n: BlocklengthMatrix, cfg: SystemConfig, omega: float | None = None) -> float:
    """Average access delay plus omega times the summed squared-hinge slack.

    Exactly the average access delay whenever every user's constraint slack
    is non-negative; the penalty is summed over users.
    """
    ev = _Evaluator(cfg, omega=omega)
    return ev.objective(np.asarray(n.n, dtype=float))


@dataclass
class _BlockContext:
    """Frozen coefficients for one packet-index block.

    c is the linear delay slope of u in seconds/symbol (attempt-count and
    occupancy weights frozen at block entry); rhat and s make the frozen
    affine slack model rhat * x + s for the quadratic penalty piece.
    """

    q: int
    base: np.ndarray
    ev: _Evaluator
    c: np.ndarray
    rhat: np.ndarray
    s: np.ndarray
    tau: float

    def u_per_user(self, z: np.ndarray) -> np.ndarray:
        hinge = np.minimum(self.rhat * z + self.s, 0.0)
        return self.c * z + self.ev.omega * hinge**2

    def block_scores(self, y: np.ndarray) -> np.ndarray:
        trial = self.base.copy()
        trial[:, self.q] = y
        return self.ev.scores(trial)

    def v_per_user(self, y: np.ndarray) -> np.ndarray:
        return self.block_scores(y) - self.u_per_user(y)


def _block_context(base: np.ndarray, q: int, ev: _Evaluator, tau: float) -> _BlockContext:
    eps = ev.eps(base)
    p_suc = (1.0 - eps) * ev.p_one
    k_users, _ = base.shape
    if ev.tp.q_th > 0:
        pi = queueing._steady_state_matrix(
            p_suc[:, 1:], queueing.arrival_tails_vector(ev.tp)
        )
    else:
        pi = np.ones((k_users, 1))
    # queue positions behind block q add pi-tail weight on top of the
    # transmission term's own unit weight
    weight = 1.0 + pi[:, q + 1 :].sum(axis=1)
    attempts = 1.0 / p_suc[:, q]
    c = weight * attempts / (ev.cfg.w_hz * ev.cfg.k_users)
    rate = ev.rate(base, eps)
    rhat = rate[:, q]
    contrib = rate * base
    s = contrib.sum(axis=1) - contrib[:, q] - ev.demand_bits
    return _BlockContext(q=q, base=base, ev=ev, c=c, rhat=rhat, s=s, tau=tau)


def augmented_lagrangian(x_q, y_q, lambda_q, tau_q: float, context: _BlockContext) -> float:
    """u(x) + v(y) + lambda.(x - y) + tau/2 ||x - y||^2 for one block."""
    x = np.asarray(x_q, dtype=float)
    y = np.asarray(y_q, dtype=float)
    lam = np.asarray(lambda_q, dtype=float)
    gap = x - y
    return float(
        context.u_per_user(x).sum()
        + context.v_per_user(y).sum()
        + np.dot(lam, gap)
        + 0.5 * tau_q * np.dot(gap, gap)
    )


def _x_update(y: np.ndarray, lam: np.ndarray, ctx: _BlockContext) -> np.ndarray:
    """Exact minimizer of u(x) + lam.x + tau/2 ||x - y||^2 over x >= 0.

    The objective is piecewise quadratic per coordinate (the hinge switches
    at rhat*x + s = 0), so the minimum is one of: the stationary point of
    either piece, the breakpoint, or zero. All four are evaluated exactly.
    """
    tau, omega = ctx.tau, ctx.ev.omega
    slope = ctx.c + lam
    cand_a = y - slope / tau
    denom = 2.0 * omega * ctx.rhat**2 + tau
    cand_b = (tau * y - slope - 2.0 * omega * ctx.rhat * ctx.s) / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        brk = np.where(ctx.rhat != 0.0, -ctx.s / ctx.rhat, 0.0)
    candidates = np.stack(
        [
            np.maximum(cand_a, 0.0),
            np.maximum(cand_b, 0.0),
            np.maximum(brk, 0.0),
            np.zeros_like(y),
        ],
        axis=1,
    )

    def phi(z: np.ndarray) -> np.ndarray:
        hinge = np.minimum(ctx.rhat[:, None] * z + ctx.s[:, None], 0.0)
        return (
            slope[:, None] * z
            + omega * hinge**2
            + 0.5 * tau * (z - y[:, None]) ** 2
        )

    best = np.argmin(phi(candidates), axis=1)
    x = candidates[np.arange(len(y)), best]
    if np.any(x < 0.0):
        raise AssertionError("x-update left the feasible orthant")
    return x


def _golden_min_vec(f, lo: float, hi: float, k: int, iters: int) -> np.ndarray:
    """Vectorized golden-section search; f maps (k,) points to (k,) values.

    All k coordinate searches run in lockstep (one vector evaluation per
    iteration), shrinking each bracket toward a local minimum on [lo, hi].
    """
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a = np.full(k, float(lo))
    b = np.full(k, float(hi))
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc < fd  # minimum bracketed in [a, d]
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        c_new = np.where(left, b - inv * (b - a), d)
        d_new = np.where(left, c, a + inv * (b - a))
        probe = np.where(left, c_new, d_new)
        f_probe = f(probe)
        fc_new = np.where(left, f_probe, fd)
        fd_new = np.where(left, fc, f_probe)
        c, d, fc, fd = c_new, d_new, fc_new, fd_new
    return 0.5 * (a + b)


def _y_update(
    x: np.ndarray, lam: np.ndarray, ctx: _BlockContext, y_prev: np.ndarray, iters: int, hi: float
) -> np.ndarray:
    """Per-user golden-section minimization of the y part of the Lagrangian.

    Minimizes v(y) - lam.y + tau/2 ||x - y||^2 coordinatewise on
    [GOLDEN_LOWER, hi]. The block objective is separable across users, so the
    coordinate searches are exact block minimizations and independent of each
    other. Keeps the previous iterate wherever the search does not improve
    on it.
    """

    def h(y: np.ndarray) -> np.ndarray:
        return ctx.v_per_user(y) - lam * y + 0.5 * ctx.tau * (x - y) ** 2

    y_new = _golden_min_vec(h, GOLDEN_LOWER, hi, len(x), iters)
    keep_prev = h(y_prev) <= h(y_new)
    return np.where(keep_prev, y_prev, y_new)


def admm_block_solve(
    q: int,
    state: OptimizerState,
    cfg: SystemConfig,
    x0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    lam0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, BlockSolveInfo]:
    """Solve one packet-index block with the other blocks held fixed.

    Iterates the constrained x-minimization, the unconstrained per-user
    y-search, and multiplier ascent until the augmented Lagrangian settles
    within cfg.opt.tol_inner. Hitting the inner cap is not an error: the best
    consensus iterate is returned with converged=False and the residual
    history so the caller can continue. The split variables and multipliers
    start at the current schedule column and zero unless explicit x0/y0/lam0
    warm starts are given.
    """
    opt = cfg.opt
    ev = _Evaluator(cfg, omega=state.omega)
    ctx = _block_context(state.n.n, q, ev, state.tau_q)
    x = state.n.n[:, q].copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    y = x.copy() if y0 is None else np.asarray(y0, dtype=float).copy()
    lam = np.zeros_like(x) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    lagr = augmented_lagrangian(x, y, lam, state.tau_q, ctx)
    residuals: list[float] = []
    converged = False
    inner = 0
    for inner in range(1, opt.max_inner + 1):
        x = _x_update(y, lam, ctx)
        y = _y_update(x, lam, ctx, y, opt.golden_iters, opt.n_max_symbols)
        lam = lam + state.tau_q * (x - y)
        lagr_new = augmented_lagrangian(x, y, lam, state.tau_q, ctx)
        residuals.append(float(np.max(np.abs(x - y))))
        state.inner_iter = inner
        if abs(lagr_new - lagr) <= opt.tol_inner:
            lagr = lagr_new
            converged = True
            break
        lagr = lagr_new
    state.x_q, state.y_q, state.lambda_q = x, y, lam
    info = BlockSolveInfo(
        inner_iters=inner,
        lagrangian=lagr,
        consensus_gap=residuals[-1] if residuals else 0.0,
        converged=converged,
        residuals=tuple(residuals),
    )
    return x, y, lam, info


def alternating_optimize(
    cfg: SystemConfig, n0: BlocklengthMatrix | None = None
) -> OptimizeResult:
    """Minimize average access delay over the blocklength schedule.

    Sweeps packet indices q = 0..q_th, solving each block via
    admm_block_solve, and repeats sweeps until the penalized objective moves
    by at most cfg.opt.tol_outer. Block results are accepted only if they do
    not worsen the objective, so the per-sweep trace is non-increasing by
    construction; the outer cap returns the best iterate with a warning
    rather than failing. Schedules warm-start across sweeps unless
    cfg.opt.warm_start is false, in which case each sweep restarts from n0.

    Rounding to integer symbols happens only in the reported
    objective_rounded; the returned schedule keeps real-valued entries.
    """
    opt = cfg.opt
    if n0 is None:
        n0 = BlocklengthMatrix.from_tti_ms(opt.init_tti_ms, cfg.k_users, cfg.q_th, cfg.w_hz)
    if n0.k_users != cfg.k_users or n0.q_slots != cfg.q_th + 1:
        raise ValueError(f"initial schedule shape {n0.n.shape} does not match config")
    if np.any(n0.n <= 0):
        raise ValueError("initial blocklengths must be positive")
    ev = _Evaluator(cfg)
    f0 = ev.objective(n0.n)
    if not math.isfinite(f0):
        raise ArithmeticError("initial schedule has non-finite objective")
    # proximal weight scaled to the per-user score (objective/K) over the
    # squared blocklength scale, so a full-range y move costs about one
    # objective unit; the config tau is a dimensionless multiplier on this
    n_scale = cfg.w_hz * opt.init_tti_ms * 1e-3
    tau_eff = opt.tau * max(f0, 1e-12) / (cfg.k_users * n_scale**2)
    state = OptimizerState(n=n0.copy(), tau_q=tau_eff, omega=opt.omega, trace=[f0])
    obj = f0
    records: list[BlockRecord] = []
    converged = False
    for t in range(1, opt.max_outer + 1):
        state.outer_iter = t
        if not opt.warm_start and t > 1:
            state.n = n0.copy()
            obj = f0
        for q in range(cfg.q_th + 1):
            state.block = q
            _, y, _, info = admm_block_solve(q, state, cfg)
            cand = np.clip(y, GOLDEN_LOWER, opt.n_max_symbols)
            trial = state.n.n.copy()
            trial[:, q] = cand
            obj_new = ev.objective(trial)
            accepted = math.isfinite(obj_new) and obj_new <= obj
            if accepted:
                state.n.n[:, q] = cand
                obj = obj_new
            records.append(
                BlockRecord(
                    outer=t,
                    block=q,
                    inner_iters=info.inner_iters,
                    lagrangian=info.lagrangian,
                    objective=obj,
                    max_violation=float(np.max(-np.minimum(ev.slacks(state.n.n), 0.0))),
                    consensus_gap=info.consensus_gap,
                    accepted=accepted,
                )
            )
        state.trace.append(obj)
        slack = 1e-6 * (1.0 + abs(state.trace[-2]))
        if state.trace[-1] > state.trace[-2] + slack:
            raise MonotonicityError(
                f"objective rose from {state.trace[-2]!r} to {state.trace[-1]!r} "
                f"at outer iteration {t}"
            )
        if abs(state.trace[-1] - state.trace[-2]) <= opt.tol_outer:
            converged = True
            break
    slacks = ev.slacks(state.n.n)
    unpenalized = queueing.average_access_delay(state.n, cfg).average_access_ms * 1e-3
    rounded = ev.objective(state.n.rounded().n)
    return OptimizeResult(
        n_opt=state.n,
        objective=obj,
        objective_unpenalized=unpenalized,
        objective_rounded=rounded,
        trace=np.asarray(state.trace),
        records=tuple(records),
        converged=converged,
        warning=None if converged else "outer iteration cap reached; best iterate returned",
        feasible=bool(np.all(slacks >= 0.0)),
        slacks=slacks,
        state=state,
    )
