"""Candidate orders and the fill, covariance, cost and rollout models."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from mpcexec.orderbook import Side


class OrderType(str, Enum):
    MARKET = "market"
    LIMIT = "limit"
    MID_IOC = "mid_ioc"


class RolloutMode(str, Enum):
    DEFAULT = "default"
    ORACLE = "oracle"


class EmptyBookSide(ValueError):
    pass


class ZeroSpread(ValueError):
    pass


class MissingClosePrice(ValueError):
    pass


@dataclass(frozen=True)
class CandidateOrder:
    index: int
    kind: OrderType
    price: int | None = None  # ticks; None for market orders
    venue: str = "SIM"


def build_ladder(side: Side, best_same: int | None, d: int) -> list[CandidateOrder]:
    """One market order followed by d-1 limits stepping away from our own touch."""
    if best_same is None:
        raise EmptyBookSide(f"no {side.name.lower()} quote to anchor the ladder")
    if d < 2:
        raise ValueError("ladder needs at least two candidates")
    sign = Side(side).sign
    ladder = [CandidateOrder(0, OrderType.MARKET)]
    for i in range(1, d):
        ladder.append(CandidateOrder(i, OrderType.LIMIT, best_same - sign * (i - 1)))
    return ladder


class FillModel(Protocol):
    def probabilities(self, ladder: list[CandidateOrder]) -> np.ndarray: ...


@dataclass
class StaticLadderFill:
    """Guaranteed market fills; limits interpolate linearly from ``top`` to ``bottom``."""

    top: float = 0.9
    bottom: float = 0.1

    def probabilities(self, ladder: list[CandidateOrder]) -> np.ndarray:
        limits = [o for o in ladder if o.kind is OrderType.LIMIT]
        n = len(limits)
        steps = np.linspace(self.top, self.bottom, n) if n > 1 else np.array([self.top] * n)
        pi = np.empty(len(ladder))
        k = 0
        for j, o in enumerate(ladder):
            if o.kind is OrderType.LIMIT:
                pi[j] = steps[k]
                k += 1
            else:
                pi[j] = 1.0
        return pi


def fill_probabilities(ladder: list[CandidateOrder]) -> np.ndarray:
    return StaticLadderFill().probabilities(ladder)


def fill_covariance(pi: np.ndarray) -> np.ndarray:
    """Covariance of nested Bernoulli fills: P(both fill) is the deeper probability."""
    pi = np.asarray(pi, dtype=float)
    sigma = np.minimum.outer(pi, pi) - np.outer(pi, pi)
    certain = pi >= 1.0
    sigma[certain, :] = 0.0
    sigma[:, certain] = 0.0
    return sigma


def trading_cost(ladder: list[CandidateOrder], mid: float, spread: float, side: Side) -> np.ndarray:
    """Signed distance from mid in spreads; market orders pay half a spread."""
    if not spread > 0:
        raise ZeroSpread(f"spread {spread}")
    sign = Side(side).sign
    c = np.empty(len(ladder))
    for j, o in enumerate(ladder):
        if o.kind is OrderType.MARKET:
            c[j] = 0.5
        elif o.kind is OrderType.MID_IOC:
            c[j] = 0.0
        else:
            c[j] = sign * (o.price - mid) / spread
    return c


def rollout_cost(
    mode: RolloutMode,
    side: Side = Side.BUY,
    mid: float | None = None,
    spread: float | None = None,
    close: float | None = None,
) -> float:
    """Per-share cost, in spreads, of finishing the residual with the base policy."""
    if RolloutMode(mode) is RolloutMode.DEFAULT:
        return 0.5
    if close is None:
        raise MissingClosePrice("oracle rollout needs the session close")
    if not spread or spread <= 0:
        raise ZeroSpread(f"spread {spread}")
    return Side(side).sign * (close - mid) / spread
