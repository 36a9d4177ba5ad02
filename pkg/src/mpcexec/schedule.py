"""Target cumulative positions for TWAP, VWAP and Almgren-Chriss schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ScheduleKind(str, Enum):
    TWAP = "twap"
    VWAP = "vwap"
    AC = "ac"


class StepOutOfRange(IndexError):
    pass


@dataclass
class Schedule:
    """Scheduled position s_t in percent of the parent (Q = 100).

    ``psi`` is the per-step Almgren-Chriss urgency; when omitted it defaults
    to 1/T so that psi*T = 1. ``profile`` holds cumulative forecast volume at
    each of the T+1 decision boundaries (VWAP only).
    """

    kind: ScheduleKind
    T: int
    Q: float = 100.0
    psi: float | None = None
    profile: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.kind = ScheduleKind(self.kind)
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.kind is ScheduleKind.AC:
            if self.psi is None:
                self.psi = 1.0 / self.T
            if self.psi < 0:
                raise ValueError("psi must be non-negative")
        if self.kind is ScheduleKind.VWAP:
            if self.profile is None:
                raise ValueError("VWAP schedule needs a volume profile")
            prof = np.asarray(self.profile, dtype=float)
            if prof.shape != (self.T + 1,):
                raise ValueError(f"profile must have T+1={self.T + 1} entries, got {prof.shape}")
            if prof[-1] <= 0 or np.any(np.diff(prof) < 0):
                raise ValueError("profile must be non-decreasing with positive terminal volume")
            self.profile = prof - prof[0]

    def at(self, t: int) -> float:
        return schedule_at(self, t)

    def path(self) -> np.ndarray:
        return np.array([schedule_at(self, t) for t in range(self.T + 1)])


def _sinh_ratio(a: float, b: float) -> float:
    """sinh(a)/sinh(b) for 0 <= a <= b, without overflow."""
    if b == 0.0:
        return 1.0
    if b < 20.0:
        return math.sinh(a) / math.sinh(b)
    return math.exp(a - b) * (-math.expm1(-2.0 * a)) / (-math.expm1(-2.0 * b))


def schedule_at(sched: Schedule, t: int) -> float:
    T = sched.T
    if not 0 <= t <= T:
        raise StepOutOfRange(f"t={t} outside [0, {T}]")
    if t == 0:
        return 0.0
    if t == T:
        return sched.Q
    if sched.kind is ScheduleKind.TWAP:
        return sched.Q * t / T
    if sched.kind is ScheduleKind.VWAP:
        prof = sched.profile
        return sched.Q * prof[t] / prof[T]
    psi = sched.psi
    if psi * T < 1e-8:
        return sched.Q * t / T
    return sched.Q * (1.0 - _sinh_ratio(psi * (T - t), psi * T))
