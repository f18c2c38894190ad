"""Arrival traffic, per-user queue occupancy, and closed-form access delay.

Per-user packet generation is Poisson over a fixed observation window. Each
user's queue length evolves as a finite Markov chain: a backlogged queue
drains by one on each successful attempt, and fresh arrivals fold in at the
empty state. The stationary occupancy and the geometric retransmission count
combine into closed-form queuing, transmission, and total access delay.

All functions are pure; concurrent use is unrestricted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import fbl
from .blocklength import BlocklengthMatrix

if TYPE_CHECKING:  # pragma: no cover
    from .config import SystemConfig


class DegenerateChainError(ValueError):
    """A zero success probability means a queue state can never drain."""


@dataclass(frozen=True)
class TrafficParams:
    """Poisson arrival model and queue sizing.

    Attributes:
        lambda_rate: packet arrival rate (packets/s), >= 0.
        t_max_s: arrival observation window (s), > 0.
        q_th: maximum queue length; q_th = 0 is the degenerate single-slot
            case used by scalar optimizer probes.
        q_max_packets: maximum packets per user; defaults to q_th.
    """

    lambda_rate: float
    t_max_s: float
    q_th: int
    q_max_packets: int | None = None

    def __post_init__(self) -> None:
        if self.lambda_rate < 0:
            raise ValueError(f"lambda_rate must be >= 0, got {self.lambda_rate}")
        if self.t_max_s <= 0:
            raise ValueError(f"t_max_s must be positive, got {self.t_max_s}")
        if self.q_th < 0:
            raise ValueError(f"q_th must be >= 0, got {self.q_th}")
        if self.q_max_packets is None:
            object.__setattr__(self, "q_max_packets", self.q_th)

    @property
    def mean_arrivals(self) -> float:
        """Expected arrivals per window, lambda_rate * t_max_s."""
        return self.lambda_rate * self.t_max_s


@dataclass(frozen=True)
class SteadyState:
    """Stationary per-user queue-length distribution over states 0..q_th."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)
        if np.any(pi < -1e-15) or np.any(pi > 1.0 + 1e-12):
            raise ValueError("occupancy probabilities must lie in [0, 1]")
        if abs(float(pi.sum()) - 1.0) > 1e-12:
            raise ValueError(f"occupancy must sum to 1, got {pi.sum()!r}")

    @property
    def q_th(self) -> int:
        return len(self.pi) - 1


@dataclass(frozen=True)
class DelayBreakdown:
    """Per-user delay components in milliseconds, plus the user average.

    ``access_ms`` is exactly ``queuing_ms + transmission_ms``. ``overhead_ms``
    is the share of access delay attributable to the fixed per-attempt
    overhead (propagation + processing); it is already contained in the other
    two components, not a third additive term.
    """

    queuing_ms: np.ndarray
    transmission_ms: np.ndarray
    overhead_ms: np.ndarray
    access_ms: np.ndarray
    average_access_ms: float

    def __post_init__(self) -> None:
        for name in ("queuing_ms", "transmission_ms", "overhead_ms", "access_ms"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
        recombined = self.queuing_ms + self.transmission_ms
        finite = np.isfinite(self.access_ms)
        if np.any(
            np.abs(recombined[finite] - self.access_ms[finite])
            > 1e-12 * np.maximum(1.0, np.abs(self.access_ms[finite]))
        ):
            raise ValueError("access delay must recombine queuing + transmission")


def poisson_pmf(tp: TrafficParams, a: int) -> float:
    """P(a packets arrive in one window), evaluated in log-space for large a."""
    if a < 0:
        raise ValueError(f"arrival count must be >= 0, got {a}")
    m = tp.mean_arrivals
    if m == 0.0:
        return 1.0 if a == 0 else 0.0
    return math.exp(a * math.log(m) - m - math.lgamma(a + 1))


def arrival_pmf_vector(tp: TrafficParams) -> np.ndarray:
    """PMF over a = 0..q_th (mass above q_th is not included)."""
    return np.array([poisson_pmf(tp, a) for a in range(tp.q_th + 1)])


def poisson_tail(tp: TrafficParams, q: int) -> float:
    """Truncated arrival tail: sum of the PMF from q up to q_th inclusive.

    The upper limit is q_th, not infinity; arrival mass beyond the queue
    capacity is dropped, matching the finite buffer.
    """
    if not 1 <= q <= tp.q_th:
        raise ValueError(f"q must lie in 1..{tp.q_th}, got {q}")
    return float(math.fsum(poisson_pmf(tp, a) for a in range(q, tp.q_th + 1)))


def arrival_tails_vector(tp: TrafficParams) -> np.ndarray:
    """Truncated tails for q = 1..q_th (empty for q_th = 0)."""
    pmf = arrival_pmf_vector(tp)
    return np.cumsum(pmf[::-1])[::-1][1:]


def expected_truncated_arrivals(tp: TrafficParams) -> float:
    """Mean of the arrival count restricted to 0..q_th packets."""
    pmf = arrival_pmf_vector(tp)
    return float(np.dot(np.arange(tp.q_th + 1), pmf))


def expected_retransmissions(p_suc: float) -> float:
    """Mean attempts until success for a geometric attempt process, 1/p_suc."""
    if np.any(np.asarray(p_suc) <= 0):
        raise DegenerateChainError("success probability 0 never transmits")
    out = 1.0 / np.asarray(p_suc, dtype=float)
    return float(out) if out.ndim == 0 else out


def steady_state(p_suc, tp: TrafficParams) -> SteadyState:
    """Stationary queue occupancy given per-state success probabilities.

    Args:
        p_suc: success probability for states q = 1..q_th (length q_th).
        tp: arrival model.

    Returns:
        SteadyState with pi_0 = 1 / (1 + sum_j tail(j)/p_suc_j) and
        pi_q = pi_0 * tail(q) / p_suc_q, which sums to one by construction.

    Raises:
        DegenerateChainError: if any success probability is zero (the state
            would never drain).
    """
    p = np.asarray(p_suc, dtype=float)
    if p.shape != (tp.q_th,):
        raise ValueError(f"expected {tp.q_th} success probabilities, got shape {p.shape}")
    if np.any(p <= 0):
        raise DegenerateChainError("a zero success probability never drains its state")
    if np.any(p > 1):
        raise ValueError("success probabilities must lie in (0, 1]")
    tails = arrival_tails_vector(tp)
    ratio = tails / p
    pi0 = 1.0 / (1.0 + float(ratio.sum()))
    return SteadyState(np.concatenate(([pi0], pi0 * ratio)))


def _steady_state_matrix(p_suc: np.ndarray, tails: np.ndarray) -> np.ndarray:
    """Vectorized stationary occupancy: p_suc is (K, q_th), tails is (q_th,)."""
    ratio = tails[None, :] / p_suc
    pi0 = 1.0 / (1.0 + ratio.sum(axis=1))
    return np.concatenate((pi0[:, None], pi0[:, None] * ratio), axis=1)


def queuing_delay(tti_row, p_suc_row, steady: SteadyState, d_p_s: float) -> float:
    """Expected wait before a new packet's first attempt, in seconds.

    A packet finding q packets ahead waits for each position l < q to be
    served: (T_l + d_p) per attempt times the expected attempt count.
    """
    tti = np.asarray(tti_row, dtype=float)
    p = np.asarray(p_suc_row, dtype=float)
    if tti.shape != p.shape or len(tti) != steady.q_th + 1:
        raise ValueError("tti, success, and occupancy dimensions disagree")
    per_position = (tti + d_p_s) / p
    ahead = np.concatenate(([0.0], np.cumsum(per_position)[:-1]))
    return float(np.dot(steady.pi, ahead))


def transmission_delay(tti_row, p_suc_row, d_p_s: float) -> float:
    """Total service time over all queue positions, in seconds.

    Sums (T_q + d_p) * E[attempts] across q = 0..q_th verbatim; note the
    q = 0 term charges a transmission slot even at an empty queue.
    """
    tti = np.asarray(tti_row, dtype=float)
    p = np.asarray(p_suc_row, dtype=float)
    if tti.shape != p.shape:
        raise ValueError("tti and success dimensions disagree")
    return float(np.sum((tti + d_p_s) / p))


def access_delay(tti_row, p_suc_row, tp: TrafficParams, d_p_s: float) -> DelayBreakdown:
    """Single-user access delay: queuing plus transmission components."""
    p = np.asarray(p_suc_row, dtype=float)
    steady = steady_state(p[1:], tp)
    queue_s = queuing_delay(tti_row, p, steady, d_p_s)
    trans_s = transmission_delay(tti_row, p, d_p_s)
    zeros = np.zeros_like(np.asarray(tti_row, dtype=float))
    over_s = queuing_delay(zeros, p, steady, d_p_s) + transmission_delay(zeros, p, d_p_s)
    access_s = queue_s + trans_s
    return DelayBreakdown(
        queuing_ms=np.array([queue_s * 1e3]),
        transmission_ms=np.array([trans_s * 1e3]),
        overhead_ms=np.array([over_s * 1e3]),
        access_ms=np.array([access_s * 1e3]),
        average_access_ms=access_s * 1e3,
    )


def success_prob_matrix(n: BlocklengthMatrix, cfg: "SystemConfig") -> np.ndarray:
    """Per-(user, position) success probability for a blocklength schedule."""
    ch = cfg.channel()
    eps = fbl.packet_error_prob(n.n, cfg.b_bits, ch)
    return (1.0 - eps) * fbl.collision_avoidance_prob(cfg.k_users, cfg.m_pre)


def average_access_delay(n: BlocklengthMatrix, cfg: "SystemConfig") -> DelayBreakdown:
    """User-averaged access delay for a schedule under a system config.

    This is the one shared delay evaluator: the optimizer objective, the
    fixed-TTI baselines, and the experiment sweeps all flow through here.
    Users whose success probability hits exactly zero at some position get
    infinite expected delay (the chain never drains), not an exception, so
    line searches can step through hopeless schedules.
    """
    if n.k_users != cfg.k_users or n.q_slots != cfg.q_th + 1:
        raise ValueError(
            f"schedule shape {n.n.shape} does not match K={cfg.k_users}, "
            f"q_th={cfg.q_th}"
        )
    p_suc = success_prob_matrix(n, cfg)
    return delays_from_success(n, p_suc, cfg.traffic(), cfg.d_p_ms * 1e-3)


def delays_from_success(
    n: BlocklengthMatrix, p_suc: np.ndarray, tp: TrafficParams, d_p_s: float
) -> DelayBreakdown:
    """Vectorized delay components given precomputed success probabilities."""
    tti = n.tti_s()
    k_users = n.k_users
    alive = p_suc.min(axis=1) > 0.0
    queue_s = np.full(k_users, np.inf)
    trans_s = np.full(k_users, np.inf)
    over_s = np.full(k_users, np.inf)
    if np.any(alive):
        p = p_suc[alive]
        t = tti[alive]
        ex = 1.0 / p
        tails = arrival_tails_vector(tp)
        pi = _steady_state_matrix(p[:, 1:], tails) if tp.q_th > 0 else np.ones((p.shape[0], 1))
        per_pos = (t + d_p_s) * ex
        per_pos_dp = d_p_s * ex
        ahead = np.concatenate((np.zeros((p.shape[0], 1)), np.cumsum(per_pos, axis=1)[:, :-1]), axis=1)
        ahead_dp = np.concatenate((np.zeros((p.shape[0], 1)), np.cumsum(per_pos_dp, axis=1)[:, :-1]), axis=1)
        queue_s[alive] = np.sum(pi * ahead, axis=1)
        trans_s[alive] = per_pos.sum(axis=1)
        over_s[alive] = np.sum(pi * ahead_dp, axis=1) + per_pos_dp.sum(axis=1)
    access_s = queue_s + trans_s
    return DelayBreakdown(
        queuing_ms=queue_s * 1e3,
        transmission_ms=trans_s * 1e3,
        overhead_ms=over_s * 1e3,
        access_ms=access_s * 1e3,
        average_access_ms=float(np.mean(access_s)) * 1e3,
    )
