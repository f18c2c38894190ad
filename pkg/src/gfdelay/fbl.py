"""Finite-blocklength link math for short-packet uplink transmission.

Pure, stateless functions: Gaussian tail inversion, the normal-approximation
achievable rate, the piecewise-linear packet error model and its expectation
over Rayleigh-faded SNR, preamble collision avoidance, and the combined
success probability. All functions accept scalars or numpy arrays and never
mutate shared state, so they are safe under arbitrary concurrency.

Units: powers in watts (linear), SNR dimensionless, blocklength in symbols,
payload in bits, rates in bits/symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, ndtri

LOG2 = math.log(2.0)
LOG2_E = 1.0 / LOG2
TWO_PI = 2.0 * math.pi

# Excursions of the closed-form error expectation beyond [0,1] by more than
# this are treated as implementation bugs, not as values to clamp silently.
_UNIT_INTERVAL_SLACK = 1e-12


def dbm_to_watts(dbm: float) -> float:
    """Convert a power level from dBm to watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    """Convert a power level from watts to dBm."""
    if watts <= 0:
        raise ValueError(f"power must be positive, got {watts}")
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class ChannelParams:
    """Received-power threshold, noise power, and optional path-loss inputs.

    Under full path-loss inversion power control with threshold ``p0_watts``
    and Rayleigh fading, the received SNR is exponentially distributed with
    mean ``snr_avg = p0_watts / noise_watts``.

    Attributes:
        p0_watts: target mean received power at the base station (W).
        noise_watts: noise power (W).
        d_m: optional user distance from the base station (m).
        alpha: optional path-loss exponent (>= 2).
        rho0: optional channel power gain at the 1 m reference distance.
    """

    p0_watts: float
    noise_watts: float
    d_m: float | None = None
    alpha: float | None = None
    rho0: float | None = None

    def __post_init__(self) -> None:
        if self.p0_watts <= 0:
            raise ValueError(f"p0_watts must be positive, got {self.p0_watts}")
        if self.noise_watts <= 0:
            raise ValueError(f"noise_watts must be positive, got {self.noise_watts}")
        if self.d_m is not None and self.d_m <= 0:
            raise ValueError(f"d_m must be positive, got {self.d_m}")
        if self.alpha is not None and self.alpha < 2:
            raise ValueError(f"alpha must be >= 2, got {self.alpha}")
        if self.rho0 is not None and self.rho0 <= 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")

    @property
    def snr_avg(self) -> float:
        """Mean received SNR, exactly p0_watts / noise_watts."""
        return self.p0_watts / self.noise_watts

    @classmethod
    def from_dbm(cls, p0_dbm: float, noise_dbm: float, **kwargs) -> "ChannelParams":
        """Build channel parameters from dBm levels (converted once, here)."""
        return cls(dbm_to_watts(p0_dbm), dbm_to_watts(noise_dbm), **kwargs)


@dataclass(frozen=True)
class FbErrorParams:
    """Breakpoints of the piecewise-linear short-packet error model.

    The conditional error probability is 1 below ``gamma1``, 0 above
    ``gamma2``, and ``1/2 - mu*(snr - beta)`` in between, so that
    ``gamma2 - gamma1 = 1/mu`` and ``beta`` is the midpoint.
    """

    mu: float
    beta: float
    gamma1: float
    gamma2: float

    def __post_init__(self) -> None:
        if not np.all(np.asarray(self.mu) > 0):
            raise ValueError("mu must be positive")
        width = np.asarray(self.gamma2) - np.asarray(self.gamma1)
        if not np.allclose(width, 1.0 / np.asarray(self.mu), rtol=1e-9, atol=0.0):
            raise ValueError("gamma2 - gamma1 must equal 1/mu")
        mid = 0.5 * (np.asarray(self.gamma1) + np.asarray(self.gamma2))
        scale = np.maximum(np.abs(np.asarray(self.beta)), 1.0)
        if not np.all(np.abs(mid - np.asarray(self.beta)) <= 1e-9 * scale):
            raise ValueError("beta must be the midpoint of (gamma1, gamma2)")


def gaussian_q(x):
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(x / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def inverse_q(p):
    """Invert the Gaussian tail: return x with Q(x) = p.

    Args:
        p: tail probability, strictly inside (0, 1). Scalar or array.

    Returns:
        The unique x with Q(x) = p, accurate to |Q(x) - p| <= 1e-10.

    Raises:
        ValueError: if any p lies outside (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"tail probability must lie strictly in (0, 1), got {p}")
    out = -ndtri(arr)
    return float(out) if out.ndim == 0 else out


def achievable_rate(n, gamma, eps):
    """Normal-approximation achievable rate at finite blocklength.

    R = log2(1 + gamma) - sqrt(V/n) * Qinv(eps) * log2(e), with channel
    dispersion V = 1 - (1 + gamma)^-2. May be negative for small n; callers
    decide how to treat that.

    Args:
        n: blocklength in symbols (> 0).
        gamma: SNR (> 0).
        eps: target error probability in (0, 1).

    Returns:
        Rate in bits per symbol.
    """
    n = np.asarray(n, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(n <= 0):
        raise ValueError("blocklength must be positive")
    if np.any(gamma <= 0):
        raise ValueError("SNR must be positive")
    v = 1.0 - 1.0 / (1.0 + gamma) ** 2
    out = np.log2(1.0 + gamma) - np.sqrt(v / n) * inverse_q(eps) * LOG2_E
    return float(out) if out.ndim == 0 else out


def _linearization_raw(n, b):
    """Return (mu, mu*beta, beta) in overflow-safe product form."""
    n = np.asarray(n, dtype=float)
    b = np.asarray(b, dtype=float)
    e = b / n
    # t = 2^-e in (0, 1]; 1 - t evaluated via expm1 to keep precision at small e
    t = np.exp(-e * LOG2)
    one_minus_t = -np.expm1(-e * LOG2)
    root_n = np.sqrt(n) / TWO_PI
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = root_n * t / np.sqrt(one_minus_t * (1.0 + t))
        mu_beta = root_n * np.sqrt(one_minus_t / (1.0 + t))
        beta = one_minus_t / t
    return mu, mu_beta, beta


def error_linearization(n, b) -> FbErrorParams:
    """Fit the piecewise-linear error model for blocklength n and payload b.

    mu = sqrt(n / (2^(2b/n) - 1)) / (2*pi), beta = 2^(b/n) - 1, and the
    breakpoints sit at beta -/+ 1/(2*mu). Evaluated in product form so that
    large b/n cannot overflow the intermediate 2^(2b/n).

    Raises:
        ValueError: if n <= 0 or b <= 0.
    """
    n_arr = np.asarray(n, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(n_arr <= 0):
        raise ValueError("blocklength must be positive")
    if np.any(b_arr <= 0):
        raise ValueError("payload bits must be positive")
    mu, mu_beta, beta = _linearization_raw(n_arr, b_arr)
    if np.any(np.asarray(mu) == 0.0):
        raise ValueError("b/n too extreme: the linearization slope underflows")
    gamma1 = (mu_beta - 0.5) / mu
    gamma2 = (mu_beta + 0.5) / mu
    if np.ndim(mu) == 0:
        return FbErrorParams(float(mu), float(beta), float(gamma1), float(gamma2))
    return FbErrorParams(mu, beta, gamma1, gamma2)


def conditional_error_prob(gamma, params: FbErrorParams):
    """Piecewise-linear conditional error probability at a given SNR draw."""
    gamma = np.asarray(gamma, dtype=float)
    mid = 0.5 - np.asarray(params.mu) * (gamma - np.asarray(params.beta))
    out = np.where(
        gamma <= np.asarray(params.gamma1),
        1.0,
        np.where(gamma > np.asarray(params.gamma2), 0.0, np.clip(mid, 0.0, 1.0)),
    )
    return float(out) if out.ndim == 0 else out


def exact_conditional_error_prob(gamma, n, b):
    """Normal-approximation conditional error at rate b/n (sensitivity only)."""
    gamma = np.asarray(gamma, dtype=float)
    n = np.asarray(n, dtype=float)
    b = np.asarray(b, dtype=float)
    v = 1.0 - 1.0 / (1.0 + gamma) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (np.log2(1.0 + gamma) - b / n) * np.sqrt(n / v) / LOG2_E
        arg = np.where(v <= 0, np.inf * np.sign(b / n - np.log2(1.0 + gamma)), arg)
    out = gaussian_q(arg)
    return float(out) if np.ndim(out) == 0 else out


def packet_error_prob(n, b, ch: ChannelParams):
    """Expected packet error probability over the exponential SNR law.

    Averages the piecewise-linear conditional error over the Rayleigh-induced
    SNR density (mean ``ch.snr_avg``). Where the lower breakpoint is
    non-negative the standard closed form applies; where it is negative
    (large n relative to b) the integral is re-derived with the lower limit
    clamped to zero, which keeps the expectation identity intact:

        gamma1 >= 0:  1 - mu*g*(exp(-gamma1/g) - exp(-gamma2/g))
        gamma1 <  0:  mu*gamma2 + mu*g*expm1(-gamma2/g)

    with g the mean SNR. Differences of near-equal exponentials are computed
    via expm1 so large mean SNR stays stable.

    Returns:
        Probability in [0, 1]. Raises ArithmeticError if the closed form ever
        strays outside [0, 1] by more than 1e-12 (a bug, not an input issue).
    """
    n_arr = np.asarray(n, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(n_arr <= 0):
        raise ValueError("blocklength must be positive")
    if np.any(b_arr <= 0):
        raise ValueError("payload bits must be positive")
    g = ch.snr_avg
    mu, mu_beta, _ = _linearization_raw(n_arr, b_arr)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gamma1 = (mu_beta - 0.5) / mu
        gamma2 = (mu_beta + 0.5) / mu
        neg = gamma1 < 0.0
        # exp argument masked per branch; np.where evaluates both sides
        e1 = np.exp(-np.where(neg, 0.0, gamma1) / g)
        p_pos = 1.0 - mu * g * e1 * (-np.expm1(-1.0 / (mu * g)))
        p_neg = mu * gamma2 + mu * g * np.expm1(-np.where(neg, gamma2, 1.0) / g)
        out = np.where(neg, p_neg, p_pos)
        # mu underflows to 0 only when b/n is so extreme that outage is certain
        out = np.where(mu == 0.0, 1.0, out)
    bad = (out < -_UNIT_INTERVAL_SLACK) | (out > 1.0 + _UNIT_INTERVAL_SLACK)
    if np.any(bad):
        raise ArithmeticError(
            f"error expectation left [0,1] by more than {_UNIT_INTERVAL_SLACK}: "
            f"n={n}, b={b}, snr_avg={g}"
        )
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def collision_avoidance_prob(k_users: int, m_pre: int):
    """Probability that a user's uniformly chosen preamble is not reused.

    With m_pre preambles and k_users contenders each picking independently
    and uniformly, a tagged user avoids collision with probability
    (1 - 1/m_pre)^(k_users - 1).
    """
    if k_users < 1:
        raise ValueError(f"k_users must be >= 1, got {k_users}")
    if m_pre < 1:
        raise ValueError(f"m_pre must be >= 1, got {m_pre}")
    return (1.0 - 1.0 / m_pre) ** (k_users - 1)


def success_prob(n, b, ch: ChannelParams, k_users: int, m_pre: int):
    """Joint probability of a collision-free, error-free transmission attempt.

    Exactly the product (1 - packet_error_prob) * collision_avoidance_prob.
    """
    return (1.0 - packet_error_prob(n, b, ch)) * collision_avoidance_prob(
        k_users, m_pre
    )


def transmit_power(
    ch: ChannelParams,
    d_m: float | None = None,
    alpha: float | None = None,
    rho0: float | None = None,
) -> float:
    """Transmit power needed so mean received power equals the threshold.

    Inversion convention: the path loss rho0 * d^-alpha is inverted, so
    P = p0_watts * d^alpha / rho0 and the mean power arriving at the base
    station is exactly p0_watts. Reporting utility only; the delay model
    consumes received-side quantities.
    """
    d_m = ch.d_m if d_m is None else d_m
    alpha = ch.alpha if alpha is None else alpha
    rho0 = ch.rho0 if rho0 is None else rho0
    if d_m is None or alpha is None or rho0 is None:
        raise ValueError("d_m, alpha, and rho0 must be provided here or on ch")
    if d_m <= 0:
        raise ValueError(f"d_m must be positive, got {d_m}")
    if rho0 <= 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    return ch.p0_watts * d_m**alpha / rho0
