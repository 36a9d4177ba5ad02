import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcexec.marketdata import (
    EVENT_DTYPE,
    NS,
    RECORD,
    MalformedRecord,
    MarketStream,
    NoTrades,
    SyntheticMarketConfig,
    TruncatedRecord,
    UnknownKind,
    ZeroQuantity,
    accumulate_vwap,
    closing_price,
    decode_records,
    encode_event,
    encode_records,
    events_to_array,
    generate_market,
    parse_event,
    read_csv,
    read_l3e,
    replay,
    static_book_stream,
    write_csv,
    write_l3e,
)
from mpcexec.orderbook import BookEvent, Kind, OrderBook, Side

U64 = st.integers(0, 2**64 - 1)
I64_POS = st.integers(1, 2**63 - 1)


@st.composite
def records(draw):
    kind = draw(st.sampled_from(list(Kind)))
    side = draw(st.sampled_from(list(Side)))
    ts, oid = draw(U64), draw(U64)
    if kind == Kind.REPLACE:
        return BookEvent(kind, ts, oid, side, draw(st.integers(0, 2**63 - 1)), draw(U64),
                         draw(U64), draw(I64_POS), draw(st.integers(1, 2**64 - 1)))
    price = draw(I64_POS) if kind == Kind.ADD else draw(st.integers(-(2**63), 2**63 - 1))
    qty = draw(U64) if kind == Kind.DELETE else draw(st.integers(1, 2**64 - 1))
    return BookEvent(kind, ts, oid, side, price, qty)


def test_add_round_trip():
    ev = BookEvent(Kind.ADD, 0, 1, Side.BUY, 100, 50)
    raw = encode_event(ev)
    assert len(raw) == RECORD.size == 58
    assert parse_event(raw) == ev


@given(records())
def test_round_trip_property(ev):
    raw = encode_event(ev)
    assert parse_event(raw) == ev
    assert encode_event(parse_event(raw)) == raw


@given(st.lists(records(), min_size=1, max_size=30))
@settings(max_examples=50)
def test_vectorised_decode_matches_scalar(evs):
    buf = b"".join(encode_event(e) for e in evs)
    arr = decode_records(buf)
    assert [BookEvent(*row) for row in arr.tolist()] == evs
    assert encode_records(arr) == buf


def test_unknown_kind():
    raw = bytearray(encode_event(BookEvent(Kind.ADD, 0, 1, Side.BUY, 100, 50)))
    raw[0] = 0xFF
    with pytest.raises(UnknownKind):
        parse_event(bytes(raw))
    with pytest.raises(UnknownKind):
        decode_records(bytes(raw))


def test_truncated_and_zero_quantity():
    raw = encode_event(BookEvent(Kind.ADD, 0, 1, Side.BUY, 100, 50))
    with pytest.raises(TruncatedRecord):
        parse_event(raw[:-1])
    with pytest.raises(TruncatedRecord):
        decode_records(raw + b"\x00")
    with pytest.raises(ZeroQuantity):
        parse_event(RECORD.pack(Kind.EXECUTE, 0, 1, Side.BUY, 100, 0, 0, 0, 0))
    with pytest.raises(MalformedRecord):
        parse_event(RECORD.pack(Kind.ADD, 0, 1, ord("Z"), 100, 5, 0, 0, 0))
    with pytest.raises(MalformedRecord):
        parse_event(RECORD.pack(Kind.ADD, 0, 1, Side.BUY, 100, 5, 3, 0, 0))


def test_file_round_trips(tmp_path):
    stream = generate_market(SyntheticMarketConfig(seed=4, duration=300.0))
    write_l3e(tmp_path / "m.l3e", stream)
    back = read_l3e(tmp_path / "m.l3e")
    assert back.tick_size == stream.tick_size and back.duration_ns == stream.duration_ns
    assert encode_records(back.events) == encode_records(stream.events)
    write_csv(tmp_path / "m.csv", stream.events)
    assert encode_records(read_csv(tmp_path / "m.csv")) == encode_records(stream.events)
    (tmp_path / "bad.l3e").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(MalformedRecord):
        read_l3e(tmp_path / "bad.l3e")


def test_generator_is_deterministic():
    cfg = SyntheticMarketConfig(seed=123, duration=600.0)
    a = hashlib.sha256(encode_records(generate_market(cfg).events)).hexdigest()
    b = hashlib.sha256(encode_records(generate_market(cfg).events)).hexdigest()
    assert a == b
    c = generate_market(SyntheticMarketConfig(seed=124, duration=600.0))
    assert hashlib.sha256(encode_records(c.events)).hexdigest() != a


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generated_stream_replays_uncrossed(seed):
    stream = generate_market(SyntheticMarketConfig(seed=seed, duration=1800.0))
    book = OrderBook()
    ts = stream.events["timestamp"]
    assert (np.diff(ts.astype(np.int64)) >= 0).all()
    for row in stream.events.tolist():
        book.apply(*row)
        bid, ask = book.best_bid(), book.best_ask()
        assert bid is None or ask is None or bid < ask
    assert book.mid() == stream.close_price


def test_event_count_is_poisson():
    # every event after the t=0 seeding is an arrival at rate r per side
    for seed in range(3):
        cfg = SyntheticMarketConfig(seed=seed, duration=3600.0)
        ev = generate_market(cfg).events
        n = int((ev["timestamp"] > 0).sum())
        mean = 2 * cfg.event_rate * cfg.duration
        assert abs(n - mean) <= 4 * np.sqrt(mean)


def _mids(stream, step_s, duration):
    book = OrderBook(stream.tick_size)
    rows = stream.events.tolist()
    ts = stream.events["timestamp"].astype(np.int64)
    pos, out = 0, []
    for g in np.arange(0, int(duration) + 1, step_s) * NS:
        end = int(np.searchsorted(ts, g, side="right"))
        for i in range(pos, end):
            book.apply(*rows[i])
        pos = end
        out.append(book.mid())
    return np.array(out)


@pytest.mark.parametrize("drift", [0.0, 20.0])
def test_mid_path_matches_configured_moments(drift):
    cfg = SyntheticMarketConfig(seed=11, drift=drift)
    step = 60
    d = np.diff(_mids(generate_market(cfg), step, cfg.duration))
    n = len(d)
    assert abs(d.mean() - drift * step / 3600) <= 3 * d.std() / np.sqrt(n)
    expected_var = step * cfg.volatility**2
    assert abs(d.var() - expected_var) <= 3 * d.var() * np.sqrt(2 / n)


def test_zero_drift_terminal_mid_unbiased():
    moves = []
    for seed in range(100):
        cfg = SyntheticMarketConfig(seed=seed, duration=120.0, event_rate=4.0)
        moves.append(closing_price(generate_market(cfg)) - cfg.initial_mid)
    moves = np.array(moves)
    assert abs(moves.mean()) <= 3 * moves.std() / np.sqrt(len(moves))


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticMarketConfig(event_rate=0).validate()
    with pytest.raises(ValueError):
        SyntheticMarketConfig(num_levels=1).validate()


def _trades(pairs):
    rows = []
    oid = 1
    for k, (price, qty) in enumerate(pairs):
        rows.append((Kind.ADD, k, oid, Side.SELL, price, qty, 0, 0, 0))
        rows.append((Kind.EXECUTE, k, oid, Side.SELL, price, qty, 0, 0, 0))
        oid += 1
    return np.array(rows, dtype=EVENT_DTYPE)


@pytest.mark.parametrize("pairs,vwap", [([(100, 10), (102, 10)], 101.0), ([(100, 30), (104, 10)], 101.0)])
def test_vwap_examples(pairs, vwap):
    got, profile = accumulate_vwap(_trades(pairs), 10, 1)
    assert got == pytest.approx(vwap, abs=1e-12)
    assert profile.terminal == sum(q for _, q in pairs)


def test_vwap_no_trades():
    with pytest.raises(NoTrades):
        accumulate_vwap(np.zeros(0, EVENT_DTYPE), 10, 3)


def test_volume_profile_is_cumulative():
    stream = generate_market(SyntheticMarketConfig(seed=3, duration=3000.0))
    _, profile = accumulate_vwap(stream.events, 300 * NS, 10)
    assert profile.cumulative[0] == 0
    assert (np.diff(profile.cumulative) >= 0).all()
    ex = stream.events[stream.events["kind"] == Kind.EXECUTE]
    assert profile.terminal == ex["quantity"].sum()


def test_static_book():
    stream = static_book_stream(1000, 2, 500, 60 * NS)
    book = replay(stream)
    assert (book.best_bid(), book.best_ask()) == (999, 1001)
    assert book.depth_at(Side.SELL, 1005) == 500
    assert isinstance(stream, MarketStream)
    assert events_to_array([BookEvent(Kind.ADD, 0, 1, Side.BUY, 5, 1)]).dtype == EVENT_DTYPE
