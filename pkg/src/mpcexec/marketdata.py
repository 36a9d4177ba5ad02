"""Event wire format, synthetic market generation and volume profiles.

Binary layout of one record (little-endian, 58 bytes)::

    kind u8 | timestamp u64 | order_id u64 | side u8 | price i64 | quantity u64
    | new_order_id u64 | new_price i64 | new_quantity u64

``kind`` and ``side`` are ASCII codes (A/E/X/D/U and B/S). The three ``new_*``
fields are only meaningful for Replace and must be zero otherwise. An ``.l3e``
file is a 24 byte header (magic ``L3EV``, version u16, record size u16,
tick size f64, session duration ns u64) followed by packed records. The CSV
mirror has one header row and the same field order.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mpcexec.orderbook import BookEvent, Kind, OrderBook, Side

RECORD = struct.Struct("<BQQBqQQqQ")
HEADER = struct.Struct("<4sHHdQ")
MAGIC = b"L3EV"
VERSION = 1
FIELDS = (
    "kind",
    "timestamp",
    "order_id",
    "side",
    "price",
    "quantity",
    "new_order_id",
    "new_price",
    "new_quantity",
)
EVENT_DTYPE = np.dtype(
    [
        ("kind", "u1"),
        ("timestamp", "<u8"),
        ("order_id", "<u8"),
        ("side", "u1"),
        ("price", "<i8"),
        ("quantity", "<u8"),
        ("new_order_id", "<u8"),
        ("new_price", "<i8"),
        ("new_quantity", "<u8"),
    ]
)
assert EVENT_DTYPE.itemsize == RECORD.size

NS = 1_000_000_000
_KINDS = frozenset(int(k) for k in Kind)
_SIDES = frozenset(int(s) for s in Side)
_NEEDS_QTY = frozenset((Kind.ADD, Kind.EXECUTE, Kind.CANCEL))


class RecordError(ValueError):
    pass


class TruncatedRecord(RecordError):
    pass


class UnknownKind(RecordError):
    pass


class ZeroQuantity(RecordError):
    pass


class MalformedRecord(RecordError):
    pass


class NoTrades(ValueError):
    pass


def _validate(kind, side, price, qty, new_id, new_price, new_qty) -> None:
    if kind not in _KINDS:
        raise UnknownKind(f"kind byte {kind:#04x}")
    if side not in _SIDES:
        raise MalformedRecord(f"side byte {side:#04x}")
    if qty == 0 and kind in _NEEDS_QTY:
        raise ZeroQuantity(f"{Kind(kind).name} with zero quantity")
    if kind == Kind.ADD and price <= 0:
        raise MalformedRecord(f"add with price {price}")
    if kind == Kind.REPLACE:
        if new_qty == 0:
            raise ZeroQuantity("replace with zero new quantity")
        if new_price <= 0:
            raise MalformedRecord(f"replace with price {new_price}")
    elif new_id or new_price or new_qty:
        raise MalformedRecord("replace fields set on a non-replace record")


def parse_event(data: bytes) -> BookEvent:
    if len(data) != RECORD.size:
        raise TruncatedRecord(f"expected {RECORD.size} bytes, got {len(data)}")
    fields = RECORD.unpack(data)
    kind, _, _, side, price, qty, new_id, new_price, new_qty = fields
    _validate(kind, side, price, qty, new_id, new_price, new_qty)
    return BookEvent(*fields)


def encode_event(ev: BookEvent) -> bytes:
    return RECORD.pack(*ev)


def events_to_array(events) -> np.ndarray:
    return np.array([tuple(ev) for ev in events], dtype=EVENT_DTYPE)


def decode_records(buf: bytes) -> np.ndarray:
    """Vectorised parse of packed records with the same checks as ``parse_event``."""
    if len(buf) % RECORD.size:
        raise TruncatedRecord(f"{len(buf)} bytes is not a multiple of {RECORD.size}")
    arr = np.frombuffer(buf, dtype=EVENT_DTYPE)
    if len(arr) == 0:
        return arr.copy()
    kind = arr["kind"]
    bad = ~np.isin(kind, list(_KINDS))
    if bad.any():
        raise UnknownKind(f"record {int(np.argmax(bad))}: kind byte {int(kind[bad][0]):#04x}")
    if (~np.isin(arr["side"], list(_SIDES))).any():
        raise MalformedRecord("bad side byte")
    needs = np.isin(kind, [int(k) for k in _NEEDS_QTY])
    if (needs & (arr["quantity"] == 0)).any():
        raise ZeroQuantity("zero quantity record")
    if ((kind == Kind.ADD) & (arr["price"] <= 0)).any():
        raise MalformedRecord("add with non-positive price")
    rep = kind == Kind.REPLACE
    if (rep & ((arr["new_quantity"] == 0) | (arr["new_price"] <= 0))).any():
        raise ZeroQuantity("replace with zero new quantity or price")
    ext = (arr["new_order_id"] != 0) | (arr["new_price"] != 0) | (arr["new_quantity"] != 0)
    if (~rep & ext).any():
        raise MalformedRecord("replace fields set on a non-replace record")
    return arr.copy()


def encode_records(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=EVENT_DTYPE).tobytes()


@dataclass
class MarketStream:
    """An in-memory session: events plus the metadata the simulator needs."""

    events: np.ndarray
    tick_size: float
    duration_ns: int
    close_price: float | None = None

    def __len__(self) -> int:
        return len(self.events)


def write_l3e(path: str | Path, stream: MarketStream) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, RECORD.size, stream.tick_size, stream.duration_ns))
        fh.write(encode_records(stream.events))


def read_l3e(path: str | Path) -> MarketStream:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise TruncatedRecord("file shorter than header")
    magic, version, size, tick, duration = HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION or size != RECORD.size:
        raise MalformedRecord(f"bad header {magic!r} v{version} size {size}")
    return MarketStream(decode_records(data[HEADER.size:]), tick, duration)


def write_csv(path: str | Path, events: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS)
        for row in events.tolist():
            writer.writerow(row)


def read_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FIELDS:
            raise MalformedRecord(f"unexpected CSV header {header}")
        rows = [tuple(int(v) for v in row) for row in reader]
    arr = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    return decode_records(arr.tobytes())


def replay(stream: MarketStream, book: OrderBook | None = None) -> OrderBook:
    book = book or OrderBook(stream.tick_size)
    apply = book.apply
    for row in stream.events.tolist():
        apply(*row)
    return book


def closing_price(stream: MarketStream) -> float:
    """Mid at the end of the session (stands in for the closing auction)."""
    if stream.close_price is not None:
        return stream.close_price
    mid = replay(stream).mid()
    if mid is None:
        raise NoTrades("book is one-sided at the close")
    stream.close_price = mid
    return mid


# --------------------------------------------------------------------------
# synthetic markets


@dataclass
class SyntheticMarketConfig:
    seed: int = 0
    duration: float = 23400.0  # seconds
    initial_mid: int = 1000  # ticks
    tick_size: float = 0.01
    event_rate: float = 2.0  # events per second per side
    volatility: float = 0.4  # std of the fair-value move per step, ticks
    drift: float = 0.0  # ticks per hour
    spread_mean: float = 2.0  # ticks
    level_depth_mean: float = 300.0  # shares
    num_levels: int = 10
    step: float = 1.0  # seconds between fair-value moves
    execute_share: float = 0.3

    def validate(self) -> None:
        positive = ("duration", "initial_mid", "tick_size", "event_rate", "spread_mean",
                    "level_depth_mean", "step")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.volatility < 0:
            raise ValueError("volatility must be non-negative")
        if self.num_levels < 2:
            raise ValueError("num_levels must be at least 2")
        if not 0 <= self.execute_share <= 1:
            raise ValueError("execute_share must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def fair_value_path(cfg: SyntheticMarketConfig) -> np.ndarray:
    """Latent Gaussian random walk (in ticks) sampled at every step."""
    rng = np.random.default_rng([cfg.seed, 1])
    n = int(math.ceil(cfg.duration / cfg.step)) + 1
    moves = cfg.drift * cfg.step / 3600.0 + cfg.volatility * rng.standard_normal(n - 1)
    return cfg.initial_mid + np.concatenate([[0.0], np.cumsum(moves)])


class _Emitter:
    def __init__(self, book: OrderBook) -> None:
        self.book = book
        self.rows: list[tuple] = []
        self.next_id = 1

    def emit(self, *row) -> None:
        self.book.apply(*row)
        self.rows.append(row)

    def add(self, ts: int, side: int, price: int, qty: int) -> None:
        oid = self.next_id
        self.next_id += 1
        self.emit(Kind.ADD, ts, oid, side, price, qty, 0, 0, 0)


def generate_market(cfg: SyntheticMarketConfig) -> MarketStream:
    """Deterministic synthetic L3 session.

    The mid tracks a latent random walk: quotes that the fair value has moved
    through are executed, the side left behind re-quotes at its target, and
    otherwise each side churns adds, cancels, replaces and touch executions.
    Every event after the t=0 seeding is an arrival of a per-side Poisson
    process with rate ``event_rate``.
    """
    cfg.validate()
    fair = fair_value_path(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    book = OrderBook(cfg.tick_size)
    out = _Emitter(book)
    spread = max(1, int(round(cfg.spread_mean)))
    nl = cfg.num_levels
    order_mean = cfg.level_depth_mean / 3.0
    depth_cap = nl * cfg.level_depth_mean

    def size() -> int:
        return max(1, int(round(rng.exponential(order_mean))))

    def targets(x: float) -> tuple[int, int]:
        bid = int(round(x - spread / 2.0))
        return bid, bid + spread

    bid_t, ask_t = targets(fair[0])
    for k in range(nl):
        for _ in range(3):
            out.add(0, Side.BUY, bid_t - k, size())
            out.add(0, Side.SELL, ask_t + k, size())

    n_buy = rng.poisson(cfg.event_rate * cfg.duration)
    n_sell = rng.poisson(cfg.event_rate * cfg.duration)
    times = np.concatenate(
        [rng.uniform(0.0, cfg.duration, n_buy), rng.uniform(0.0, cfg.duration, n_sell)]
    )
    sides = np.concatenate([np.full(n_buy, int(Side.BUY)), np.full(n_sell, int(Side.SELL))])
    order = np.argsort(times, kind="stable")
    times, sides = times[order], sides[order]
    ts_ns = np.maximum((times * NS).astype(np.int64), 1)
    steps = np.minimum((times / cfg.step).astype(np.int64), len(fair) - 1)
    u = rng.random((len(times), 3))

    for j in range(len(times)):
        ts = int(ts_ns[j])
        side = int(sides[j])
        sign = 1 if side == Side.BUY else -1
        bid_t, ask_t = targets(fair[steps[j]])
        target = bid_t if side == Side.BUY else ask_t
        opp = book.best_ask() if side == Side.BUY else book.best_bid()
        best = book.best(side)
        if best is not None and sign * (best - target) > 0:
            # the fair value has moved through this quote: it trades away
            oid = book.head_order(side, best)
            out.emit(Kind.EXECUTE, ts, oid, side, best, book.remaining(oid), 0, 0, 0)
            continue
        if best is None or sign * (target - best) > 0:
            price = target
        else:
            r = u[j, 0]
            if r < cfg.execute_share:
                oid = book.head_order(side, best)
                qty = min(book.remaining(oid), max(1, int(rng.exponential(order_mean / 2))))
                out.emit(Kind.EXECUTE, ts, oid, side, best, qty, 0, 0, 0)
                continue
            prices = book._prices[side]
            deepest = prices[0] if side == Side.BUY else prices[-1]
            if sign * (target - deepest) >= nl and u[j, 1] < 0.5:
                oid = book.head_order(side, deepest)
                out.emit(Kind.DELETE, ts, oid, side, deepest, 0, 0, 0, 0)
                continue
            if book.total_depth(side) > depth_cap and len(prices) > 1:
                oid = book.random_order(side, u[j, 1])
                rec = book._orders[oid]
                rem, at = rec[2], rec[1]
                if u[j, 2] < 0.2:
                    new_price = target - sign * int(u[j, 1] * nl)
                    if opp is not None and sign * (new_price - opp) >= 0:
                        new_price = opp - sign
                    new_id = out.next_id
                    out.next_id += 1
                    out.emit(Kind.REPLACE, ts, oid, side, at, rem, new_id, new_price, size())
                elif rem > 1 and u[j, 2] < 0.6:
                    out.emit(Kind.CANCEL, ts, oid, side, at, rem // 2, 0, 0, 0)
                else:
                    out.emit(Kind.DELETE, ts, oid, side, at, 0, 0, 0, 0)
                continue
            price = target - sign * int(u[j, 1] * nl)
        if opp is not None and sign * (price - opp) >= 0:
            price = opp - sign
        if price <= 0:
            continue
        out.add(ts, side, price, size())

    events = np.array(out.rows, dtype=EVENT_DTYPE)
    return MarketStream(events, cfg.tick_size, int(round(cfg.duration * NS)), book.mid())


def static_book_stream(
    mid_ticks: int,
    spread: int,
    depth: int,
    duration_ns: int,
    tick_size: float = 0.01,
    num_levels: int = 10,
) -> MarketStream:
    """A book seeded at t=0 that never changes afterwards."""
    half = spread // 2
    bid, ask = mid_ticks - half, mid_ticks - half + spread
    rows = []
    oid = 1
    for k in range(num_levels):
        rows.append((Kind.ADD, 0, oid, Side.BUY, bid - k, depth, 0, 0, 0))
        rows.append((Kind.ADD, 0, oid + 1, Side.SELL, ask + k, depth, 0, 0, 0))
        oid += 2
    events = np.array(rows, dtype=EVENT_DTYPE)
    return MarketStream(events, tick_size, duration_ns, 0.5 * (bid + ask))


# --------------------------------------------------------------------------
# volume


@dataclass
class VolumeProfile:
    boundaries: np.ndarray  # ns, length n_buckets + 1
    cumulative: np.ndarray  # executed volume up to each boundary

    @property
    def terminal(self) -> float:
        return float(self.cumulative[-1])


def accumulate_vwap(
    events: np.ndarray, bucket_ns: int, n_buckets: int, start_ns: int = 0
) -> tuple[float, VolumeProfile]:
    """Market VWAP (ticks) and cumulative executed volume over the window.

    Raises ``NoTrades`` when the window holds no executions.
    """
    end_ns = start_ns + bucket_ns * n_buckets
    ts = events["timestamp"].astype(np.int64)
    mask = (events["kind"] == Kind.EXECUTE) & (ts >= start_ns) & (ts <= end_ns)
    qty = events["quantity"][mask].astype(float)
    boundaries = start_ns + bucket_ns * np.arange(n_buckets + 1, dtype=np.int64)
    if qty.sum() <= 0:
        raise NoTrades("no executions in window")
    px = events["price"][mask].astype(float)
    vwap = float((px * qty).sum() / qty.sum())
    cum = np.concatenate([[0.0], np.cumsum(qty)])
    idx = np.searchsorted(ts[mask], boundaries, side="right")
    # executions exactly at the window start belong to the first bucket
    idx[0] = 0
    return vwap, VolumeProfile(boundaries, cum[idx])
