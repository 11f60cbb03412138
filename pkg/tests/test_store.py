import random
import socket
import threading
import time
from datetime import timedelta

import pytest

from decoyloop.events import EventKind, serialize_event
from decoyloop.store import (
    EventStore,
    FileTail,
    Replay,
    SocketListener,
    SourceUnavailable,
    SubscriberLagOverflow,
    ingest,
    parse_source,
)
from .test_events import make_event, ts


@pytest.fixture
def store(tmp_path):
    s = EventStore(tmp_path / "store")
    yield s
    s.close()


def _write_log(path, events):
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(serialize_event(event) + "\n")


def _fixture_events(n=100, ip="203.0.113.7"):
    events = []
    for i in range(n):
        events.append(make_event(EventKind.SESSION_CONNECT, float(i), f"{i:08x}", ip))
    return events


# -- ingest -------------------------------------------------------------------

def test_replay_instant(tmp_path, store):
    log = tmp_path / "fixture.jsonl"
    _write_log(log, _fixture_events(100))
    summary = ingest(Replay(path=str(log)), store)
    assert summary.accepted == 100
    assert summary.skipped == 0
    assert len(store) == 100


def test_replay_timed_scales_gaps(tmp_path, store):
    events = [make_event(EventKind.SESSION_CONNECT, t, f"{int(t * 10):08x}") for t in (0.0, 1.0, 2.0)]
    log = tmp_path / "fixture.jsonl"
    _write_log(log, events)
    started = time.monotonic()
    ingest(Replay(path=str(log), speed=4.0), store)
    elapsed = time.monotonic() - started
    assert 0.3 <= elapsed <= 1.2  # 2 s of event time at speed 4 -> ~0.5 s


def test_lenient_skips_garbage(tmp_path, store):
    log = tmp_path / "fixture.jsonl"
    lines = [serialize_event(e) for e in _fixture_events(9)]
    lines.insert(4, "{this is not json")
    log.write_text("\n".join(lines) + "\n")
    summary = ingest(Replay(path=str(log)), store, lenient=True)
    assert (summary.accepted, summary.skipped) == (9, 1)


def test_strict_mode_raises_on_garbage(tmp_path, store):
    log = tmp_path / "fixture.jsonl"
    log.write_text("{bad json\n")
    with pytest.raises(Exception):
        ingest(Replay(path=str(log)), store, lenient=False)


def test_lenient_skips_unknown_eventid(tmp_path, store):
    log = tmp_path / "fixture.jsonl"
    log.write_text(
        '{"eventid":"cowrie.direct-tcpip.request","timestamp":"2025-05-15T08:00:00.000000Z",'
        '"session":"s1","src_ip":"203.0.113.7"}\n'
    )
    summary = ingest(Replay(path=str(log)), store, lenient=True)
    assert (summary.accepted, summary.skipped) == (0, 1)


def test_future_skew_rejected(tmp_path, store):
    from datetime import datetime, timezone

    future = datetime.now(timezone.utc) + timedelta(seconds=3600)
    event = make_event(EventKind.SESSION_CONNECT, 0.0)
    line = serialize_event(event).replace(
        "2025-05-15T08:00:00.000000Z", future.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    )
    log = tmp_path / "fixture.jsonl"
    log.write_text(line + "\n")
    summary = ingest(Replay(path=str(log)), store)
    assert (summary.accepted, summary.skipped) == (0, 1)
    assert "future" in summary.errors[0]


def test_missing_source(store):
    with pytest.raises(SourceUnavailable):
        ingest(Replay(path="/nonexistent/file.jsonl"), store)


def test_file_source(tmp_path, store):
    log = tmp_path / "fixture.jsonl"
    _write_log(log, _fixture_events(10))
    summary = ingest(FileTail(path=str(log)), store)
    assert summary.accepted == 10


def test_socket_source(tmp_path, store):
    stop = threading.Event()
    results = {}

    # Bind a fixed ephemeral port first so the test can connect reliably.
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()

    def run_fixed():
        results["summary"] = ingest(SocketListener("127.0.0.1", port), store, stop_event=stop)

    thread = threading.Thread(target=run_fixed, daemon=True)
    thread.start()
    time.sleep(0.2)
    with socket.create_connection(("127.0.0.1", port), timeout=5) as conn:
        for event in _fixture_events(5):
            conn.sendall((serialize_event(event) + "\n").encode())
    time.sleep(0.4)
    stop.set()
    thread.join(timeout=5)
    assert results["summary"].accepted == 5


def test_parse_source_specs():
    assert parse_source("file:/var/log/cowrie.json") == FileTail(path="/var/log/cowrie.json")
    assert parse_source("tcp:0.0.0.0:5140") == SocketListener(host="0.0.0.0", port=5140)
    assert parse_source("replay:fixture.jsonl") == Replay(path="fixture.jsonl")
    assert parse_source("replay:fixture.jsonl:10") == Replay(path="fixture.jsonl", speed=10.0)
    assert parse_source("replay:fixture.jsonl:instant") == Replay(path="fixture.jsonl")
    with pytest.raises(ValueError):
        parse_source("carrier-pigeon:coop")


# -- query ---------------------------------------------------------------------

def test_empty_window(store):
    for event in _fixture_events(5):
        store.append(event)
    assert store.query(ts(2), ts(2)) == []


def test_query_window_and_filters(store):
    for i in range(20):
        kind = EventKind.LOGIN_FAILED if i % 3 == 0 else EventKind.SESSION_CONNECT
        ip = "203.0.113.7" if i % 2 == 0 else "198.51.100.9"
        store.append(make_event(kind, float(i), f"{i:08x}", ip))
    window = store.query(ts(5), ts(15))
    assert all(ts(5) <= e.timestamp < ts(15) for e in window)
    failed = store.query(ts(0), ts(100), kinds={EventKind.LOGIN_FAILED})
    assert all(e.kind is EventKind.LOGIN_FAILED for e in failed)
    assert len(failed) == 7
    mixed = store.query(ts(0), ts(100), kinds={EventKind.LOGIN_FAILED}, src_ips={"203.0.113.7"})
    assert all(e.src_ip == "203.0.113.7" and e.kind is EventKind.LOGIN_FAILED for e in mixed)


def test_fixture_count_query(store):
    # 31 failed-login events among a larger population, query picks exactly them
    rng = random.Random(31)
    others = 964 - 31
    failed_times = rng.sample(range(964), 31)
    for i in range(964):
        kind = EventKind.LOGIN_FAILED if i in failed_times else EventKind.SESSION_CONNECT
        store.append(make_event(kind, float(i), f"{i:08x}"))
    result = store.query(ts(0), ts(2000), kinds={EventKind.LOGIN_FAILED})
    assert len(result) == 31


def test_query_equals_linear_scan(store):
    rng = random.Random(7)
    events = []
    for i in range(300):
        kind = rng.choice(list(EventKind))
        extra = {}
        if kind is EventKind.COMMAND_INPUT:
            extra["input"] = "ls"
        event = make_event(kind, rng.uniform(0, 3600), f"{i:08x}", f"203.0.113.{rng.randrange(1, 30)}", **extra)
        events.append(event)
        store.append(event)
    for _ in range(25):
        a, b = sorted((rng.uniform(0, 3600), rng.uniform(0, 3600)))
        kinds = set(rng.sample(list(EventKind), rng.randrange(1, 4))) if rng.random() < 0.5 else None
        ips = {f"203.0.113.{rng.randrange(1, 30)}"} if rng.random() < 0.5 else None
        got = store.query(ts(a), ts(b), kinds=kinds, src_ips=ips)
        expected = [
            e
            for e in sorted(events, key=lambda e: e.timestamp)
            if ts(a) <= e.timestamp < ts(b)
            and (kinds is None or e.kind in kinds)
            and (ips is None or e.src_ip in ips)
        ]
        assert got == expected


def test_full_range_query_preserves_append_order_for_monotone_input(store):
    events = _fixture_events(50)
    for event in events:
        store.append(event)
    assert store.query() == events


def test_repeated_query_stable(store):
    for event in _fixture_events(30):
        store.append(event)
    first = store.query(ts(0), ts(100))
    assert store.query(ts(0), ts(100)) == first


# -- durability -------------------------------------------------------------------

def test_reopen_preserves_events(tmp_path):
    store = EventStore(tmp_path / "store")
    events = _fixture_events(25)
    for event in events:
        store.append(event)
    store.close()
    reopened = EventStore(tmp_path / "store")
    assert reopened.query() == events
    reopened.close()


def test_partial_final_line_dropped(tmp_path):
    store = EventStore(tmp_path / "store")
    for event in _fixture_events(10):
        store.append(event)
    store.close()
    segment = tmp_path / "store" / "segments" / "0000.jsonl"
    with open(segment, "ab") as fh:
        fh.write(b'{"eventid":"cowrie.session.connect","timestamp":"2025-')  # torn write
    reopened = EventStore(tmp_path / "store")
    assert len(reopened) == 10
    assert reopened.recovered_partial == 1
    reopened.close()


def test_segment_rotation(tmp_path):
    store = EventStore(tmp_path / "store", rotate_bytes=2048)
    for event in _fixture_events(40):
        store.append(event)
    store.close()
    segments = sorted((tmp_path / "store" / "segments").glob("*.jsonl"))
    assert len(segments) > 1
    reopened = EventStore(tmp_path / "store", rotate_bytes=2048)
    assert len(reopened) == 40
    reopened.close()


# -- subscribe ---------------------------------------------------------------------

def test_subscribe_delivers_after_subscription(store):
    before = _fixture_events(3)
    for event in before:
        store.append(event)
    subscription = store.subscribe()
    after = [make_event(EventKind.LOGIN_FAILED, 100.0 + i, f"{i:08x}" * 2) for i in range(5)]
    for event in after:
        store.append(event)
    received = [subscription.get(timeout=1.0) for _ in range(5)]
    assert received == after
    assert subscription.get() is None


def test_two_subscribers_identical_streams(store):
    sub_a, sub_b = store.subscribe(), store.subscribe()
    events = _fixture_events(10)
    for event in events:
        store.append(event)
    got_a = [sub_a.get(timeout=1.0) for _ in range(10)]
    got_b = [sub_b.get(timeout=1.0) for _ in range(10)]
    assert got_a == got_b == events


def test_slow_subscriber_overflows(store):
    subscription = store.subscribe(buffer=10)
    for event in _fixture_events(1000):
        store.append(event)
    drained = 0
    with pytest.raises(SubscriberLagOverflow):
        while True:
            if subscription.get() is None and not subscription.dropped:
                break
            drained += 1
    assert drained <= 10
    assert any(a["kind"] == "subscriber_lag_overflow" for a in store.audit)


def test_exactly_once_delivery(store):
    subscription = store.subscribe(buffer=5000)
    events = _fixture_events(200)
    for event in events:
        store.append(event)
    received = []
    while True:
        event = subscription.get()
        if event is None:
            break
        received.append(event)
    keys = [(e.session, e.kind, e.timestamp) for e in received]
    assert len(keys) == len(set(keys)) == 200
