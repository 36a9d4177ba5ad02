"""Parent-order episodes on a replayed book.

Each decision step cancels whatever is still resting from the previous step,
reads the book, asks the policy for child orders and submits them after the
configured latency. Our orders never move the public book except for the
liquidity we take, and resting orders fill from public executions at their
queue position.

Market orders are sent as limits at the far touch seen at decision time, so
a price that moves away during the latency leaves part of the order resting
until the next step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from mpcexec.marketdata import NS, MarketStream, NoTrades, accumulate_vwap
from mpcexec.models import EmptyBookSide, FillModel, OrderType, RolloutMode
from mpcexec.mpc import FEAS_TOL, DecisionState, MpcConfig, build_problem, solve
from mpcexec.orderbook import OrderBook, Side, TrackedOrder
from mpcexec.schedule import Schedule


class StreamExhausted(RuntimeError):
    pass


class PolicyError(RuntimeError):
    pass


@dataclass
class ParentOrder:
    side: Side
    T: int = 78
    interval: float = 300.0  # seconds per step
    notional: float = 10_000.0  # dollars
    Q: float = 100.0

    def validate(self) -> None:
        self.side = Side(self.side)
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.interval > 0:
            raise ValueError("interval must be positive")
        if self.notional < 0:
            raise ValueError("notional must be non-negative")

    def shares(self, price_ticks: float, tick_size: float) -> int:
        """Whole shares bought with the notional at the arrival price."""
        return int(math.floor(self.notional / (price_ticks * tick_size) + 1e-9))


@dataclass
class ExecConfig:
    latency: float = 0.010  # seconds between decision and arrival at the venue
    min_order: float = 0.01  # percent of Q; smaller allocations are dropped
    start: float = 0.0  # session offset of the first decision, seconds
    strict_fills: bool = False

    def validate(self) -> None:
        if self.latency < 0 or self.min_order < 0 or self.start < 0:
            raise ValueError("latency, min_order and start must be non-negative")


@dataclass
class ChildOrder:
    index: int  # candidate index in the ladder, 0 for the market order
    kind: OrderType
    price: int | None
    pct: float  # percent of Q


@dataclass
class Decision:
    orders: list[ChildOrder]
    u: np.ndarray | None = None
    m_hat: float = math.nan
    v_hat: float = math.nan
    max_violation: float = 0.0
    slack: float = 0.0


@dataclass
class EpisodeState:
    t: int
    T: int
    q: float  # percent of Q
    side: Side
    book: OrderBook
    mid: float | None  # ticks
    spread: int | None  # ticks
    close: float | None = None
    open_orders: list[TrackedOrder] = field(default_factory=list)

    @property
    def best_same(self) -> int | None:
        return self.book.best(self.side)


class Policy(Protocol):
    name: str

    def reset(self) -> None: ...

    def decide(self, state: EpisodeState, schedule: Schedule) -> Decision: ...


class CrossingPolicy:
    """Buy (or sell) the scheduled shortfall with one market order per step."""

    name = "crossing"

    def reset(self) -> None:
        pass

    def decide(self, state: EpisodeState, schedule: Schedule) -> Decision:
        s_next = schedule.at(state.t + 1)
        need = max(0.0, s_next - state.q)
        orders = [ChildOrder(0, OrderType.MARKET, None, need)] if need > 0 else []
        return Decision(orders, np.array([need]), m_hat=state.q + need - s_next, v_hat=0.0)


def crossing_policy(state: EpisodeState, s_next: float) -> list[ChildOrder]:
    need = max(0.0, s_next - state.q)
    return [ChildOrder(0, OrderType.MARKET, None, need)] if need > 0 else []


class MpcPolicy:
    """One-step lookahead over a ladder of candidate orders."""

    def __init__(self, config: MpcConfig | None = None, fill_model: FillModel | None = None) -> None:
        self.config = config or MpcConfig()
        self.config.validate()
        self.fill_model = fill_model
        self.name = "mpc-oracle" if self.config.rollout is RolloutMode.ORACLE else "mpc"
        self._warm: np.ndarray | None = None

    def reset(self) -> None:
        self._warm = None

    def decide(self, state: EpisodeState, schedule: Schedule) -> Decision:
        if state.mid is None or not state.spread:
            raise PolicyError(f"step {state.t}: book is one-sided")
        ds = DecisionState(
            t=state.t,
            T=state.T,
            q=state.q,
            side=state.side,
            mid=state.mid,
            spread=float(state.spread),
            best_same=state.best_same,
            close=state.close,
        )
        try:
            problem, ladder = build_problem(ds, schedule, self.config, self.fill_model)
            ctl = solve(problem, warm_start=self._warm)
        except (EmptyBookSide, ArithmeticError, RuntimeError, ValueError) as exc:
            raise PolicyError(f"step {state.t}: {exc}") from exc
        self._warm = ctl.u
        orders = [
            ChildOrder(o.index, o.kind, o.price, float(ctl.u[o.index]))
            for o in ladder
            if ctl.u[o.index] > 0
        ]
        worst = max(problem.violations(ctl.u).values())
        return Decision(orders, ctl.u, ctl.m_hat, ctl.v_hat, max(worst, 0.0), ctl.slack)


def mpc_policy(
    state: EpisodeState, schedule: Schedule, mode: RolloutMode = RolloutMode.DEFAULT, **kwargs
) -> list[ChildOrder]:
    """Stateless convenience wrapper; episodes use ``MpcPolicy`` for warm starts."""
    return MpcPolicy(MpcConfig(rollout=mode, **kwargs)).decide(state, schedule).orders


@dataclass
class FillRecord:
    step: int
    price: float  # dollars
    quantity: int  # shares
    index: int


@dataclass
class EpisodeResult:
    policy: str
    side: Side
    shares: int
    fills: list[FillRecord]
    schedule: np.ndarray  # s_t, t = 0..T
    q: np.ndarray  # q_t, t = 0..T
    m_hat: np.ndarray  # t = 0..T-1
    v_hat: np.ndarray
    submitted: np.ndarray  # percent of Q actually sent, t = 0..T-1
    max_violation: float
    mids: np.ndarray  # dollars at each decision, t = 0..T-1
    p_0: float
    p_vwap: float
    p_swap: float
    p_close: float
    tag: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> np.ndarray:
        return self.q - self.schedule

    @property
    def filled(self) -> int:
        return sum(f.quantity for f in self.fills)

    @property
    def completion(self) -> float:
        return self.q[-1] / 100.0

    @property
    def p_fwap(self) -> float:
        qty = self.filled
        if qty == 0:
            return math.nan
        return sum(f.price * f.quantity for f in self.fills) / qty


class _Cursor:
    """Feeds stream events into a book up to a timestamp."""

    def __init__(self, stream: MarketStream, book: OrderBook) -> None:
        self.rows = stream.events.tolist()
        self.ts = stream.events["timestamp"].astype(np.int64)
        self.book = book
        self.pos = 0

    def advance(self, ts: int) -> None:
        end = int(np.searchsorted(self.ts, ts, side="right"))
        apply = self.book.apply
        rows = self.rows
        for i in range(self.pos, end):
            apply(*rows[i])
        self.pos = max(self.pos, end)


def run_episode(
    policy: Policy,
    stream: MarketStream,
    parent: ParentOrder,
    schedule: Schedule,
    config: ExecConfig | None = None,
) -> EpisodeResult:
    config = config or ExecConfig()
    config.validate()
    parent.validate()
    if schedule.T != parent.T:
        raise ValueError(f"schedule has T={schedule.T}, parent has T={parent.T}")
    T = parent.T
    step_ns = int(round(parent.interval * NS))
    start_ns = int(round(config.start * NS))
    lat_ns = int(round(config.latency * NS))
    if stream.duration_ns < start_ns + T * step_ns:
        raise StreamExhausted(
            f"stream covers {stream.duration_ns / NS:.0f}s, episode needs {(start_ns + T * step_ns) / NS:.0f}s"
        )
    tick = stream.tick_size
    book = OrderBook(tick, strict_fills=config.strict_fills)
    cursor = _Cursor(stream, book)
    side = Side(parent.side)
    close = stream.close_price
    policy.reset()

    cursor.advance(start_ns)
    mid0 = book.mid()
    if mid0 is None:
        raise StreamExhausted("book is one-sided at the start of the episode")
    shares = parent.shares(mid0, tick)
    per_pct = shares / 100.0

    fills: list[FillRecord] = []
    open_orders: list[TrackedOrder] = []
    filled_shares = 0
    q = np.zeros(T + 1)
    m_hat = np.full(T, math.nan)
    v_hat = np.full(T, math.nan)
    submitted = np.zeros(T)
    mids = np.zeros(T)
    worst = 0.0

    swept: list[FillRecord] = []

    def collect(step: int) -> int:
        got = sum(f.quantity for f in swept)
        fills.extend(swept)
        swept.clear()
        for o in open_orders:
            if o.active:
                book.cancel(o)
            for f in o.fills:
                fills.append(FillRecord(step, f.price * tick, f.quantity, o.tag))
                got += f.quantity
        open_orders.clear()
        return got

    for t in range(T):
        now = start_ns + t * step_ns
        cursor.advance(now)
        filled_shares += collect(t - 1)
        q[t] = 100.0 * filled_shares / shares if shares else 0.0
        mid = book.mid()
        if mid is None:
            raise StreamExhausted(f"book is one-sided at step {t}")
        mids[t] = mid * tick
        state = EpisodeState(t, T, q[t], side, book, mid, book.spread(), close)
        decision = policy.decide(state, schedule)
        m_hat[t], v_hat[t] = decision.m_hat, decision.v_hat
        worst = max(worst, decision.max_violation)

        far = book.best(side.opposite)
        orders = []
        for child in decision.orders:
            if child.pct < config.min_order or shares == 0:
                continue
            n = int(math.floor(child.pct * per_pct + 1e-9))
            if n <= 0:
                continue
            price = far if child.kind is OrderType.MARKET else child.price
            orders.append((child.index, price, n))
            submitted[t] += 100.0 * n / shares
        cursor.advance(now + lat_ns)
        send_ts = max(now + lat_ns, book.last_timestamp)
        for index, price, n in orders:
            if price is None:
                # nothing on the far side to lift: sweep whatever arrives
                for f in book.submit_market(side, n, send_ts):
                    swept.append(FillRecord(t, f.price * tick, f.quantity, index))
                continue
            open_orders.append(book.submit_limit(side, price, n, send_ts, tag=index))

    end = start_ns + T * step_ns
    cursor.advance(end)
    filled_shares += collect(T - 1)
    q[T] = 100.0 * filled_shares / shares if shares else 0.0

    try:
        vwap_ticks, _ = accumulate_vwap(stream.events, step_ns, T, start_ns)
        p_vwap = vwap_ticks * tick
    except NoTrades:
        p_vwap = math.nan
    path = schedule.path()
    p_swap = float(np.diff(path) @ mids / schedule.Q)
    return EpisodeResult(
        policy=getattr(policy, "name", type(policy).__name__),
        side=side,
        shares=shares,
        fills=fills,
        schedule=path,
        q=q,
        m_hat=m_hat,
        v_hat=v_hat,
        submitted=submitted,
        max_violation=worst,
        mids=mids,
        p_0=mid0 * tick,
        p_vwap=p_vwap,
        p_swap=p_swap,
        p_close=(close * tick) if close is not None else math.nan,
    )


EPISODE_FIELDS = (
    "policy", "side", "shares", "filled", "completion", "p_0", "p_fwap", "p_vwap", "p_swap",
    "p_close", "max_violation",
)
TRACE_FIELDS = ("step", "s", "q", "epsilon", "m_hat", "v_hat", "submitted", "mid")


def episode_row(result: EpisodeResult) -> dict:
    row = {
        "policy": result.policy,
        "side": result.side.name.lower(),
        "shares": result.shares,
        "filled": result.filled,
        "completion": result.completion,
        "p_0": result.p_0,
        "p_fwap": result.p_fwap,
        "p_vwap": result.p_vwap,
        "p_swap": result.p_swap,
        "p_close": result.p_close,
        "max_violation": result.max_violation,
    }
    return {**result.tag, **row}


def write_episodes(path: str | Path, results: list[EpisodeResult]) -> None:
    rows = [episode_row(r) for r in results]
    keys = list(dict.fromkeys(k for row in rows for k in row)) if rows else list(EPISODE_FIELDS)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_trace(path: str | Path, result: EpisodeResult) -> None:
    T = len(result.mids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for t in range(T + 1):
            last = t == T
            writer.writerow(
                [
                    t,
                    result.schedule[t],
                    result.q[t],
                    result.epsilon[t],
                    "" if last else result.m_hat[t],
                    "" if last else result.v_hat[t],
                    "" if last else result.submitted[t],
                    "" if last else result.mids[t],
                ]
            )
