"""Level-3 order book reconstruction and shadow order simulation.

The public book is rebuilt exactly from an event stream. Our own orders are
shadow orders: they take liquidity and earn queue-position fills, but never
change which public events arrive later. Liquidity we take from a public order
is remembered as ``shadow`` quantity on that order so later public events that
reference it still reconcile.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple


class Side(IntEnum):
    BUY = ord("B")
    SELL = ord("S")

    @property
    def sign(self) -> int:
        """Side multiplier: +1 for buys, -1 for sells."""
        return 1 if self is Side.BUY else -1

    @property
    def opposite(self) -> Side:
        return Side.SELL if self is Side.BUY else Side.BUY


class Kind(IntEnum):
    ADD = ord("A")
    EXECUTE = ord("E")
    CANCEL = ord("X")
    DELETE = ord("D")
    REPLACE = ord("U")


class BookEvent(NamedTuple):
    """One L3 message. Prices are integer ticks, timestamps integer ns."""

    kind: int
    timestamp: int
    order_id: int
    side: int
    price: int
    quantity: int
    new_order_id: int = 0
    new_price: int = 0
    new_quantity: int = 0


class Fill(NamedTuple):
    timestamp: int
    price: int
    quantity: int


class BookError(Exception):
    pass


class UnknownOrderId(BookError):
    pass


class CrossedBookEvent(BookError):
    pass


class NonMonotoneTimestamp(BookError):
    pass


class InvalidEvent(BookError):
    pass


class InactiveOrder(BookError):
    pass


@dataclass(slots=True)
class TrackedOrder:
    """One of our resting limit orders and its queue position."""

    side: Side
    price: int
    quantity: int
    queue_ahead: int
    submit_timestamp: int
    filled: int = 0
    active: bool = True
    level_executed: int = 0
    tag: int | None = None
    fills: list[Fill] = field(default_factory=list)

    @property
    def residual(self) -> int:
        return self.quantity - self.filled


def on_market_trade(tracked: TrackedOrder, executed_at_level: int, strict: bool = False) -> int:
    """Credit fills once cumulative level volume passes our queue position.

    ``executed_at_level`` is cumulative since the order joined, so repeated
    calls never double count. With ``strict`` we are only credited volume that
    trades behind our own order.
    """
    if not tracked.active:
        raise InactiveOrder("order is no longer active")
    offset = tracked.queue_ahead + (tracked.quantity if strict else 0)
    credited = min(max(executed_at_level - offset, 0), tracked.quantity)
    fill = max(credited - tracked.filled, 0)
    tracked.filled += fill
    return fill


# order record layout, kept as a mutable list for speed
_SIDE, _PRICE, _REMAINING, _SHADOW = 0, 1, 2, 3


class OrderBook:
    """Two-sided book with FIFO queues per price level."""

    def __init__(self, tick_size: float = 0.01, strict_fills: bool = False) -> None:
        self.tick_size = tick_size
        self.strict_fills = strict_fills
        self.last_timestamp = 0
        self._orders: dict[int, list] = {}
        self._queues: dict[int, dict[int, dict[int, list]]] = {Side.BUY: {}, Side.SELL: {}}
        self._depth: dict[int, dict[int, int]] = {Side.BUY: {}, Side.SELL: {}}
        self._prices: dict[int, list[int]] = {Side.BUY: [], Side.SELL: []}
        self._tracked: list[TrackedOrder] = []

    # ------------------------------------------------------------------ views
    def best_bid(self) -> int | None:
        prices = self._prices[Side.BUY]
        return prices[-1] if prices else None

    def best_ask(self) -> int | None:
        prices = self._prices[Side.SELL]
        return prices[0] if prices else None

    def best(self, side: Side) -> int | None:
        return self.best_bid() if side == Side.BUY else self.best_ask()

    def mid(self) -> float | None:
        bids, asks = self._prices[Side.BUY], self._prices[Side.SELL]
        if not bids or not asks:
            return None
        return 0.5 * (bids[-1] + asks[0])

    def spread(self) -> int | None:
        bids, asks = self._prices[Side.BUY], self._prices[Side.SELL]
        if not bids or not asks:
            return None
        return asks[0] - bids[-1]

    def depth_at(self, side: Side, price: int) -> int:
        return self._depth[side].get(price, 0)

    def level_queue(self, side: Side, price: int) -> list[tuple[int, int]]:
        queue = self._queues[side].get(price, {})
        return [(oid, rec[_REMAINING]) for oid, rec in queue.items()]

    def levels(self, side: Side) -> list[tuple[int, int]]:
        """(price, depth) pairs from the touch outward."""
        prices = self._prices[side]
        ordered = reversed(prices) if side == Side.BUY else prices
        return [(p, self._depth[side][p]) for p in ordered]

    def total_depth(self, side: Side) -> int:
        return sum(self._depth[side].values())

    def order_count(self, side: Side) -> int:
        return sum(len(q) for q in self._queues[side].values())

    def remaining(self, order_id: int) -> int:
        rec = self._orders.get(order_id)
        if rec is None:
            raise UnknownOrderId(order_id)
        return rec[_REMAINING]

    def head_order(self, side: Side, price: int) -> int | None:
        queue = self._queues[side].get(price)
        if not queue:
            return None
        return next(iter(queue))

    def random_order(self, side: Side, rank: float) -> int | None:
        """Order id at fractional position ``rank`` in [0, 1) across the side."""
        prices = self._prices[side]
        if not prices:
            return None
        price = prices[min(int(rank * len(prices)), len(prices) - 1)]
        return next(iter(self._queues[side][price]))

    @property
    def tracked(self) -> list[TrackedOrder]:
        return list(self._tracked)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    # --------------------------------------------------------------- internals
    def _insert(self, order_id: int, side: int, price: int, qty: int) -> list:
        rec = [side, price, qty, 0]
        self._orders[order_id] = rec
        queues = self._queues[side]
        queue = queues.get(price)
        if queue is None:
            queue = queues[price] = {}
            bisect.insort(self._prices[side], price)
            self._depth[side][price] = 0
        queue[order_id] = rec
        self._depth[side][price] += qty
        return rec

    def _unlink(self, order_id: int, rec: list) -> None:
        """Remove from its queue; the level depth loses whatever was still visible."""
        side, price = rec[_SIDE], rec[_PRICE]
        queue = self._queues[side][price]
        del queue[order_id]
        self._depth[side][price] -= rec[_REMAINING]
        if not queue:
            del self._queues[side][price]
            del self._depth[side][price]
            prices = self._prices[side]
            del prices[bisect.bisect_left(prices, price)]

    def _reduce(self, order_id: int, rec: list, qty: int) -> None:
        """Public removal of ``qty`` shares, drawing down shadow-taken shares last."""
        remaining, shadow = rec[_REMAINING], rec[_SHADOW]
        if qty > remaining + shadow:
            raise InvalidEvent(f"order {order_id}: removes {qty} of {remaining + shadow}")
        visible = qty if qty < remaining else remaining
        rec[_SHADOW] = shadow - (qty - visible)
        if visible:
            if visible < remaining:
                rec[_REMAINING] = remaining - visible
                self._depth[rec[_SIDE]][rec[_PRICE]] -= visible
            else:
                self._unlink(order_id, rec)
                rec[_REMAINING] = 0
        if rec[_REMAINING] == 0 and rec[_SHADOW] == 0:
            del self._orders[order_id]

    def _take(self, order_id: int, rec: list, qty: int) -> None:
        """Shadow consumption of a public order by one of our orders."""
        rec[_SHADOW] += qty
        if qty < rec[_REMAINING]:
            rec[_REMAINING] -= qty
            self._depth[rec[_SIDE]][rec[_PRICE]] -= qty
        else:
            self._unlink(order_id, rec)
            rec[_REMAINING] = 0

    def _check_cross(self, side: int, price: int) -> None:
        if side == Side.BUY:
            asks = self._prices[Side.SELL]
            if asks and price >= asks[0]:
                raise CrossedBookEvent(f"bid {price} >= ask {asks[0]}")
        else:
            bids = self._prices[Side.BUY]
            if bids and price <= bids[-1]:
                raise CrossedBookEvent(f"ask {price} <= bid {bids[-1]}")

    def _cross_tracked(self, ts: int, order_id: int, rec: list) -> None:
        """A new public order priced through one of our resting orders trades with it."""
        side = rec[_SIDE]
        sign = 1 if side == Side.BUY else -1
        candidates = [
            o for o in self._tracked
            if o.side != side and o.filled < o.quantity and sign * (o.price - rec[_PRICE]) <= 0
        ]
        candidates.sort(key=lambda o: -sign * o.price)
        for o in candidates:
            if order_id not in self._orders or rec[_REMAINING] == 0:
                break
            take = min(o.quantity - o.filled, rec[_REMAINING])
            self._take(order_id, rec, take)
            o.filled += take
            o.level_executed = max(o.level_executed, o.queue_ahead + o.quantity)
            o.fills.append(Fill(ts, o.price, take))

    def _notify_trade(self, ts: int, side: int, price: int, qty: int) -> None:
        strict = self.strict_fills
        for o in self._tracked:
            if o.side != side or o.filled >= o.quantity:
                continue
            if price == o.price:
                o.level_executed += qty
            elif (price < o.price) if side == Side.BUY else (price > o.price):
                # volume traded through our price: our whole level has cleared
                floor = o.queue_ahead + (o.quantity if strict else 0)
                o.level_executed = max(o.level_executed, floor) + qty
            else:
                continue
            fill = on_market_trade(o, o.level_executed, strict)
            if fill:
                o.fills.append(Fill(ts, o.price, fill))

    def _advance(self, ts: int) -> None:
        if ts < self.last_timestamp:
            raise NonMonotoneTimestamp(f"{ts} < {self.last_timestamp}")
        self.last_timestamp = ts

    # ------------------------------------------------------------ public API
    def apply_event(self, ev: BookEvent) -> None:
        self.apply(*ev)

    def apply(
        self,
        kind: int,
        ts: int,
        order_id: int,
        side: int,
        price: int,
        qty: int,
        new_order_id: int = 0,
        new_price: int = 0,
        new_qty: int = 0,
    ) -> None:
        """Apply one event given as raw record fields."""
        if ts < self.last_timestamp:
            raise NonMonotoneTimestamp(f"{ts} < {self.last_timestamp}")
        self.last_timestamp = ts
        if kind == Kind.ADD:
            if qty <= 0 or price <= 0:
                raise InvalidEvent(f"add {order_id}: price={price} qty={qty}")
            if side != Side.BUY and side != Side.SELL:
                raise InvalidEvent(f"add {order_id}: side {side}")
            if order_id in self._orders:
                raise InvalidEvent(f"duplicate order id {order_id}")
            self._check_cross(side, price)
            rec = self._insert(order_id, side, price, qty)
            if self._tracked:
                self._cross_tracked(ts, order_id, rec)
            return
        rec = self._orders.get(order_id)
        if rec is None:
            raise UnknownOrderId(order_id)
        if kind == Kind.EXECUTE:
            if qty <= 0:
                raise InvalidEvent(f"execute {order_id}: qty={qty}")
            o_side, o_price = rec[_SIDE], rec[_PRICE]
            self._reduce(order_id, rec, qty)
            if self._tracked:
                self._notify_trade(ts, o_side, o_price, qty)
        elif kind == Kind.CANCEL:
            if qty <= 0:
                raise InvalidEvent(f"cancel {order_id}: qty={qty}")
            self._reduce(order_id, rec, qty)
        elif kind == Kind.DELETE:
            if rec[_REMAINING]:
                self._unlink(order_id, rec)
            del self._orders[order_id]
        elif kind == Kind.REPLACE:
            if new_qty <= 0 or new_price <= 0:
                raise InvalidEvent(f"replace {order_id}: price={new_price} qty={new_qty}")
            if new_order_id in self._orders:
                raise InvalidEvent(f"duplicate order id {new_order_id}")
            o_side = rec[_SIDE]
            if rec[_REMAINING]:
                self._unlink(order_id, rec)
            del self._orders[order_id]
            self._check_cross(o_side, new_price)
            new_rec = self._insert(new_order_id, o_side, new_price, new_qty)
            if self._tracked:
                self._cross_tracked(ts, new_order_id, new_rec)
        else:
            raise InvalidEvent(f"unknown kind {kind}")

    def submit_market(
        self, side: Side, qty: int, ts: int, limit_price: int | None = None
    ) -> list[Fill]:
        """Take liquidity from the opposite side, walking levels from the touch.

        With ``limit_price`` the order is a marketable limit and stops at that
        price. An empty opposite side yields no fills.
        """
        if qty <= 0:
            raise InvalidEvent(f"market qty {qty}")
        self._advance(ts)
        opp = Side.SELL if side == Side.BUY else Side.BUY
        fills: list[Fill] = []
        need = qty
        while need:
            prices = self._prices[opp]
            if not prices:
                break
            price = prices[0] if opp == Side.SELL else prices[-1]
            if limit_price is not None and (
                price > limit_price if side == Side.BUY else price < limit_price
            ):
                break
            got = 0
            queue = self._queues[opp][price]
            while need and queue:
                oid = next(iter(queue))
                rec = queue[oid]
                take = min(need, rec[_REMAINING])
                self._take(oid, rec, take)
                need -= take
                got += take
            fills.append(Fill(ts, price, got))
        return fills

    def submit_limit(self, side: Side, price: int, qty: int, ts: int, tag: int | None = None) -> TrackedOrder:
        """Join (or create) the level at ``price``; a marketable portion trades first."""
        if qty <= 0 or price <= 0:
            raise InvalidEvent(f"limit price={price} qty={qty}")
        self._advance(ts)
        fills: list[Fill] = []
        opp_best = self.best_ask() if side == Side.BUY else self.best_bid()
        if opp_best is not None and (price >= opp_best if side == Side.BUY else price <= opp_best):
            fills = self.submit_market(side, qty, ts, limit_price=price)
        filled = sum(f.quantity for f in fills)
        order = TrackedOrder(
            side=Side(side),
            price=price,
            quantity=qty,
            queue_ahead=self.depth_at(side, price),
            submit_timestamp=ts,
            filled=filled,
            tag=tag,
            fills=fills,
        )
        self._tracked.append(order)
        return order

    def cancel(self, tracked: TrackedOrder) -> int:
        """Withdraw a tracked order; returns the unfilled residual."""
        if not tracked.active:
            raise InactiveOrder("order already cancelled")
        tracked.active = False
        self._tracked.remove(tracked)
        return tracked.quantity - tracked.filled

    def cancel_all(self) -> int:
        residual = 0
        for o in list(self._tracked):
            residual += self.cancel(o)
        return residual
