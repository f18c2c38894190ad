"""Per-user, per-packet blocklength schedule and its TTI view."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BlocklengthMatrix:
    """K x (Q_th + 1) blocklength schedule in symbols.

    Row k holds user k's blocklengths indexed by packet/queue position
    q = 0..Q_th. Entries are real-valued while being optimized and rounded to
    integer symbols only for reporting and simulation. The TTI of entry (k, q)
    is n[k, q] / w_hz seconds (blocklength = TTI x bandwidth).
    """

    n: np.ndarray
    w_hz: float

    def __post_init__(self) -> None:
        self.n = np.asarray(self.n, dtype=float)
        if self.n.ndim != 2:
            raise ValueError(f"blocklength matrix must be 2-D, got shape {self.n.shape}")
        if self.w_hz <= 0:
            raise ValueError(f"w_hz must be positive, got {self.w_hz}")
        if np.any(self.n < 0) or not np.all(np.isfinite(self.n)):
            raise ValueError("blocklength entries must be finite and >= 0")

    @property
    def k_users(self) -> int:
        return self.n.shape[0]

    @property
    def q_slots(self) -> int:
        return self.n.shape[1]

    def tti_s(self) -> np.ndarray:
        """Per-entry transmission time interval in seconds."""
        return self.n / self.w_hz

    def rounded(self) -> "BlocklengthMatrix":
        """Nearest positive integer symbol counts (minimum 1)."""
        return BlocklengthMatrix(np.maximum(np.rint(self.n), 1.0), self.w_hz)

    def copy(self) -> "BlocklengthMatrix":
        return BlocklengthMatrix(self.n.copy(), self.w_hz)

    @classmethod
    def constant(cls, symbols: float, k_users: int, q_th: int, w_hz: float) -> "BlocklengthMatrix":
        """Uniform schedule: every (k, q) entry set to ``symbols``."""
        return cls(np.full((k_users, q_th + 1), float(symbols)), w_hz)

    @classmethod
    def from_tti_ms(cls, tti_ms: float, k_users: int, q_th: int, w_hz: float) -> "BlocklengthMatrix":
        """Uniform schedule at a fixed TTI, e.g. 1.0 ms or 0.5 ms frames."""
        return cls.constant(tti_ms * 1e-3 * w_hz, k_users, q_th, w_hz)
