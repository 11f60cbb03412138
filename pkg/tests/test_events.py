import json
import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoyloop.events import (
    EventKind,
    HoneypotEvent,
    MalformedJson,
    SchemaViolation,
    UnknownEventId,
    assemble_sessions,
    parse_event,
    serialize_event,
)

T0 = datetime(2025, 5, 15, 8, 0, 0, tzinfo=timezone.utc)


def ts(seconds: float) -> datetime:
    return T0 + timedelta(seconds=seconds)


def make_event(kind=EventKind.SESSION_CONNECT, at=0.0, session="a1b2c3d4", ip="203.0.113.7", **kw):
    payload = {}
    if kind in (EventKind.LOGIN_FAILED, EventKind.LOGIN_SUCCESS):
        payload = {"username": "root", "password": "123456"}
    elif kind is EventKind.COMMAND_INPUT:
        payload = {"input": "uname -a"}
    elif kind is EventKind.SESSION_CLOSED:
        payload = {"duration": 1.0}
    payload.update(kw)
    return HoneypotEvent(kind=kind, timestamp=ts(at), session=session, src_ip=ip, **payload)


# -- parse_event ------------------------------------------------------------

def test_parse_minimal_connect():
    line = (
        '{"eventid":"cowrie.session.connect","timestamp":"2025-05-15T08:00:00.000000Z",'
        '"session":"a1b2c3d4","src_ip":"203.0.113.7","src_port":51000,'
        '"dst_ip":"10.0.0.4","dst_port":2222,"sensor":"hp1"}'
    )
    event = parse_event(line)
    assert event.kind is EventKind.SESSION_CONNECT
    assert event.src_ip == "203.0.113.7"
    assert event.src_port == 51000
    assert event.dst_port == 2222
    assert event.timestamp == T0


def test_parse_login_failure_alias_canonicalized():
    line = (
        '{"eventid":"cowrie.login.failure","timestamp":"2025-05-15T08:00:01.000000Z",'
        '"session":"a1b2c3d4","src_ip":"203.0.113.7","username":"root","password":"123456"}'
    )
    event = parse_event(line)
    assert event.kind is EventKind.LOGIN_FAILED
    assert event.username == "root"


def test_alias_and_canonical_yield_same_kind():
    base = {
        "timestamp": "2025-05-15T08:00:01.000000Z",
        "session": "s1",
        "src_ip": "203.0.113.7",
        "username": "a",
        "password": "b",
    }
    via_alias = parse_event(json.dumps({"eventid": "cowrie.login.failure", **base}))
    via_canonical = parse_event(json.dumps({"eventid": "cowrie.login.failed", **base}))
    assert via_alias.kind is via_canonical.kind is EventKind.LOGIN_FAILED


def test_missing_timestamp_names_field():
    with pytest.raises(SchemaViolation) as err:
        parse_event('{"eventid":"cowrie.session.connect"}')
    assert err.value.field_name == "timestamp"


def test_missing_login_payload_names_field():
    with pytest.raises(SchemaViolation) as err:
        parse_event(
            '{"eventid":"cowrie.login.failed","timestamp":"2025-05-15T08:00:00.000000Z",'
            '"session":"s1","src_ip":"203.0.113.7","username":"root"}'
        )
    assert err.value.field_name == "password"


def test_naive_timestamp_rejected():
    with pytest.raises(SchemaViolation):
        parse_event(
            '{"eventid":"cowrie.session.connect","timestamp":"2025-05-15T08:00:00",'
            '"session":"s1","src_ip":"203.0.113.7"}'
        )


def test_malformed_json():
    with pytest.raises(MalformedJson):
        parse_event("{nope")
    with pytest.raises(MalformedJson):
        parse_event('["a","list"]')


def test_unknown_eventid():
    with pytest.raises(UnknownEventId):
        parse_event(
            '{"eventid":"cowrie.direct-tcpip.request","timestamp":"2025-05-15T08:00:00.000000Z",'
            '"session":"s1","src_ip":"203.0.113.7"}'
        )


def test_unknown_fields_preserved():
    line = (
        '{"eventid":"cowrie.command.input","timestamp":"2025-05-15T08:00:00.000000Z",'
        '"session":"s1","src_ip":"203.0.113.7","input":"ls","ttylog":"xyz","protocol":"ssh"}'
    )
    event = parse_event(line)
    assert event.extra == {"ttylog": "xyz", "protocol": "ssh"}
    assert json.loads(serialize_event(event))["ttylog"] == "xyz"


def test_blocked_attempt_kind_parses():
    line = (
        '{"eventid":"decoyloop.blocked.attempt","timestamp":"2025-05-15T08:00:00.000000Z",'
        '"session":"deadbeef","src_ip":"198.51.100.9"}'
    )
    assert parse_event(line).kind is EventKind.BLOCKED_ATTEMPT


def test_command_input_requires_nonempty_input():
    with pytest.raises(SchemaViolation) as err:
        make_event(EventKind.COMMAND_INPUT, input="")
    assert err.value.field_name == "input"


def test_session_closed_requires_nonnegative_duration():
    with pytest.raises(SchemaViolation):
        make_event(EventKind.SESSION_CLOSED, duration=-0.5)


def test_bad_src_ip_rejected():
    with pytest.raises(SchemaViolation):
        make_event(ip="999.1.1.1")


# -- serialize_event --------------------------------------------------------

def test_serialize_uses_canonical_eventid():
    event = make_event(EventKind.LOGIN_FAILED)
    data = json.loads(serialize_event(event))
    assert data["eventid"] == "cowrie.login.failed"


def test_serialize_connect_eventid():
    data = json.loads(serialize_event(make_event()))
    assert data["eventid"] == "cowrie.session.connect"


def test_roundtrip_command_input():
    event = make_event(EventKind.COMMAND_INPUT, input="uname -a")
    assert parse_event(serialize_event(event)) == event


_kind_st = st.sampled_from(list(EventKind))
_text_st = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=20
)


@st.composite
def _event_st(draw):
    kind = draw(_kind_st)
    payload = {}
    if kind in (EventKind.LOGIN_FAILED, EventKind.LOGIN_SUCCESS):
        payload["username"] = draw(_text_st)
        payload["password"] = draw(_text_st)
    elif kind is EventKind.COMMAND_INPUT:
        payload["input"] = draw(st.text(min_size=1, max_size=40))
    elif kind is EventKind.SESSION_CLOSED:
        payload["duration"] = draw(
            st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)
        )
    elif kind is EventKind.CLIENT_VERSION:
        payload["version"] = draw(_text_st)
    elif kind is EventKind.CLIENT_KEX:
        payload["kex_fingerprint"] = draw(st.text(alphabet="0123456789abcdef", min_size=8, max_size=32))
    return HoneypotEvent(
        kind=kind,
        timestamp=ts(draw(st.integers(min_value=0, max_value=10**6)) / 1000.0),
        session=draw(st.text(alphabet="0123456789abcdef", min_size=8, max_size=16)),
        src_ip=draw(st.ip_addresses()).compressed,
        src_port=draw(st.integers(min_value=0, max_value=65535)),
        dst_ip="10.0.0.4",
        dst_port=2222,
        sensor="hp1",
        message=draw(_text_st),
        extra={"aux": draw(_text_st)},
        **payload,
    )


@settings(max_examples=200, deadline=None)
@given(_event_st())
def test_roundtrip_identity_property(event):
    assert parse_event(serialize_event(event)) == event


# -- assemble_sessions ------------------------------------------------------

def _basic_stream(session="a1b2c3d4", ip="203.0.113.7"):
    return [
        make_event(EventKind.SESSION_CONNECT, 0.0, session, ip),
        make_event(EventKind.LOGIN_FAILED, 1.0, session, ip),
        make_event(EventKind.SESSION_CLOSED, 4.2, session, ip, duration=4.2),
    ]


def test_assemble_single_session():
    result = assemble_sessions(_basic_stream())
    assert len(result.sessions) == 1
    assert not result.orphans
    session = result.sessions[0]
    assert session.duration == 4.2
    assert session.closed
    assert len(session.login_outcomes) == 1
    assert not session.login_outcomes[0].success


def test_assemble_two_interleaved_sessions():
    events = [
        make_event(EventKind.SESSION_CONNECT, 0.0, "aaaa1111", "203.0.113.1"),
        make_event(EventKind.SESSION_CONNECT, 0.5, "bbbb2222", "203.0.113.2"),
        make_event(EventKind.COMMAND_INPUT, 1.0, "aaaa1111", "203.0.113.1", input="ls"),
        make_event(EventKind.COMMAND_INPUT, 1.5, "bbbb2222", "203.0.113.2", input="id"),
        make_event(EventKind.SESSION_CLOSED, 2.0, "aaaa1111", "203.0.113.1", duration=2.0),
    ]
    result = assemble_sessions(events)
    by_id = {s.id: s for s in result.sessions}
    assert set(by_id) == {"aaaa1111", "bbbb2222"}
    assert [c.input for c in by_id["aaaa1111"].commands] == ["ls"]
    assert [c.input for c in by_id["bbbb2222"].commands] == ["id"]
    assert by_id["bbbb2222"].duration is None  # still open


def test_lone_command_is_orphan():
    result = assemble_sessions([make_event(EventKind.COMMAND_INPUT, 1.0, "feedc0de", input="ls")])
    assert result.sessions == []
    assert len(result.orphans) == 1


def test_open_session_has_no_duration():
    result = assemble_sessions([make_event(EventKind.SESSION_CONNECT, 0.0)])
    assert result.sessions[0].duration is None
    assert result.sessions[0].closed_at is None


def test_client_version_recorded():
    events = [
        make_event(EventKind.SESSION_CONNECT, 0.0),
        make_event(EventKind.CLIENT_VERSION, 0.1, version="SSH-2.0-libssh2_1.10.0"),
    ]
    assert assemble_sessions(events).sessions[0].client_version == "SSH-2.0-libssh2_1.10.0"


def _random_stream(rng, n_sessions=8, orphan_rate=0.1):
    events = []
    for i in range(n_sessions):
        sid = f"{rng.getrandbits(48):012x}"
        ip = f"203.0.113.{rng.randrange(1, 250)}"
        t = rng.uniform(0, 500)
        events.append(make_event(EventKind.SESSION_CONNECT, t, sid, ip))
        for j in range(rng.randrange(0, 5)):
            kind = rng.choice([EventKind.LOGIN_FAILED, EventKind.LOGIN_SUCCESS, EventKind.COMMAND_INPUT])
            events.append(make_event(kind, t + 0.5 + j, sid, ip))
        if rng.random() < 0.7:
            events.append(make_event(EventKind.SESSION_CLOSED, t + 10, sid, ip, duration=10.0))
    for _ in range(int(len(events) * orphan_rate)):
        events.append(make_event(EventKind.LOGIN_FAILED, rng.uniform(0, 500), f"{rng.getrandbits(48):012x}"))
    return events


def _session_snapshot(result):
    return sorted(
        (
            s.id,
            s.src_ip,
            s.connect_at,
            s.closed_at,
            s.duration,
            tuple(s.login_outcomes),
            tuple(s.commands),
        )
        for s in result.sessions
    )


def test_assembly_permutation_invariant():
    rng = random.Random(1234)
    events = _random_stream(rng)
    baseline = assemble_sessions(events)
    for _ in range(5):
        shuffled = events[:]
        rng.shuffle(shuffled)
        result = assemble_sessions(shuffled)
        assert _session_snapshot(result) == _session_snapshot(baseline)
        assert sorted(o.session for o in result.orphans) == sorted(o.session for o in baseline.orphans)


def test_count_conservation():
    rng = random.Random(99)
    events = _random_stream(rng, n_sessions=20)
    result = assemble_sessions(events)
    total = sum(
        1 + len(s.login_outcomes) + len(s.commands) + (1 if s.closed else 0)
        for s in result.sessions
    ) + len(result.orphans)
    assert total == len(events)


def test_sessions_and_logins_time_ordered():
    rng = random.Random(7)
    events = _random_stream(rng)
    rng.shuffle(events)
    for session in assemble_sessions(events).sessions:
        times = [a.at for a in session.login_outcomes]
        assert times == sorted(times)
        ctimes = [c.at for c in session.commands]
        assert ctimes == sorted(ctimes)
