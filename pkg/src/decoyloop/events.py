"""Canonical telemetry schema: Cowrie-compatible newline-JSON events.

Every downstream stage (store, detection, metrics) consumes the types in
this module. The wire format is one JSON object per line, UTF-8, LF
terminated, and is field-compatible with Cowrie's ``cowrie.json`` output
for the seven in-scope eventids.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, NamedTuple, Optional


class EventError(ValueError):
    """Base class for telemetry parse/validation failures."""


class MalformedJson(EventError):
    """Line is not a single well-formed JSON object."""


class UnknownEventId(EventError):
    """eventid is not one of the supported kinds (or their aliases)."""


class SchemaViolation(EventError):
    """A required field is missing or carries an invalid value."""

    def __init__(self, field_name: str, detail: str = ""):
        self.field_name = field_name
        super().__init__(f"{field_name}: {detail}" if detail else field_name)


class EventKind(Enum):
    """Supported telemetry kinds, by canonical wire name."""

    SESSION_CONNECT = "cowrie.session.connect"
    LOGIN_FAILED = "cowrie.login.failed"
    LOGIN_SUCCESS = "cowrie.login.success"
    SESSION_CLOSED = "cowrie.session.closed"
    CLIENT_VERSION = "cowrie.client.version"
    CLIENT_KEX = "cowrie.client.kex"
    COMMAND_INPUT = "cowrie.command.input"
    # Artifact plumbing, deliberately namespaced outside cowrie.*: records a
    # refused connection from an already-blocked source (recidivism signal).
    BLOCKED_ATTEMPT = "decoyloop.blocked.attempt"


# Some Cowrie-derived tooling spells the failed-login eventid both ways;
# parsing absorbs the alias and always canonicalizes to LOGIN_FAILED.
EVENTID_ALIASES = {"cowrie.login.failure": EventKind.LOGIN_FAILED}

_WIRE_TO_KIND = {k.value: k for k in EventKind}

LOGIN_KINDS = frozenset({EventKind.LOGIN_FAILED, EventKind.LOGIN_SUCCESS})

#: Kinds that belong to a session's lifecycle (used by count-conservation).
SESSION_SCOPED_KINDS = frozenset(
    {
        EventKind.SESSION_CONNECT,
        EventKind.LOGIN_FAILED,
        EventKind.LOGIN_SUCCESS,
        EventKind.COMMAND_INPUT,
        EventKind.SESSION_CLOSED,
    }
)

MAX_SESSION_ID_LEN = 64


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive (zone-less) values are rejected."""
    if not isinstance(value, str):
        raise SchemaViolation("timestamp", f"expected string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise SchemaViolation("timestamp", str(exc)) from None
    if dt.tzinfo is None:
        raise SchemaViolation("timestamp", "naive timestamp rejected, UTC offset required")
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Render a timestamp as ISO-8601 UTC with microseconds and trailing Z."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


def _validate_ip(value: str, field_name: str) -> str:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        raise SchemaViolation(field_name, f"not a valid IP address: {value!r}") from None
    return value


@dataclass(frozen=True)
class HoneypotEvent:
    """One telemetry record.

    Core fields are present on every kind; payload fields (username,
    password, input, version, kex_fingerprint, duration) apply per kind.
    Unknown wire fields survive round-trips in ``extra``.
    """

    kind: EventKind
    timestamp: datetime
    session: str
    src_ip: str
    src_port: int = 0
    dst_ip: str = ""
    dst_port: int = 0
    sensor: str = ""
    message: str = ""
    username: Optional[str] = None
    password: Optional[str] = None
    input: Optional[str] = None
    version: Optional[str] = None
    kex_fingerprint: Optional[str] = None
    duration: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise SchemaViolation("timestamp", "naive timestamp rejected")
        if not self.session or len(self.session) > MAX_SESSION_ID_LEN:
            raise SchemaViolation("session", "must be non-empty and at most 64 chars")
        _validate_ip(self.src_ip, "src_ip")
        if self.dst_ip:
            _validate_ip(self.dst_ip, "dst_ip")
        for name, port in (("src_port", self.src_port), ("dst_port", self.dst_port)):
            if not isinstance(port, int) or not 0 <= port <= 65535:
                raise SchemaViolation(name, f"invalid port: {port!r}")
        if self.kind in LOGIN_KINDS:
            if self.username is None:
                raise SchemaViolation("username", "required for login events")
            if self.password is None:
                raise SchemaViolation("password", "required for login events")
        elif self.kind is EventKind.COMMAND_INPUT:
            if not self.input:
                raise SchemaViolation("input", "required and non-empty for command events")
        elif self.kind is EventKind.SESSION_CLOSED:
            if self.duration is None:
                raise SchemaViolation("duration", "required for session-closed events")
            if not isinstance(self.duration, (int, float)) or self.duration < 0:
                raise SchemaViolation("duration", f"must be >= 0, got {self.duration!r}")


_CORE_FIELDS = ("timestamp", "session", "src_ip", "src_port", "dst_ip", "dst_port", "sensor", "message")
_PAYLOAD_FIELDS = ("username", "password", "input", "version", "kex_fingerprint", "duration")


def parse_event(line: str) -> HoneypotEvent:
    """Parse one newline-JSON telemetry line into a validated event.

    Raises MalformedJson for syntactically bad input, UnknownEventId for
    eventids outside the supported set, and SchemaViolation (naming the
    field) for missing or invalid required fields. Unknown JSON keys are
    kept in ``event.extra``, never dropped.
    """
    try:
        data = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(data, dict):
        raise MalformedJson(f"expected a JSON object, got {type(data).__name__}")

    eventid = data.pop("eventid", None)
    if eventid is None:
        raise SchemaViolation("eventid", "missing")
    kind = _WIRE_TO_KIND.get(eventid) or EVENTID_ALIASES.get(eventid)
    if kind is None:
        raise UnknownEventId(str(eventid))

    if "timestamp" not in data:
        raise SchemaViolation("timestamp", "missing")
    timestamp = parse_timestamp(data.pop("timestamp"))

    for required in ("session", "src_ip"):
        if required not in data:
            raise SchemaViolation(required, "missing")

    fields: dict[str, Any] = {
        "kind": kind,
        "timestamp": timestamp,
        "session": str(data.pop("session")),
        "src_ip": str(data.pop("src_ip")),
    }
    for name in ("src_port", "dst_port"):
        if name in data:
            raw = data.pop(name)
            if not isinstance(raw, int) or isinstance(raw, bool):
                raise SchemaViolation(name, f"expected integer, got {raw!r}")
            fields[name] = raw
    for name in ("dst_ip", "sensor", "message"):
        if name in data:
            fields[name] = str(data.pop(name))
    for name in _PAYLOAD_FIELDS:
        if name in data:
            value = data.pop(name)
            if name == "duration":
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise SchemaViolation("duration", f"expected number, got {value!r}")
                value = float(value)
            else:
                value = str(value)
            fields[name] = value
    fields["extra"] = data
    return HoneypotEvent(**fields)


def serialize_event(event: HoneypotEvent) -> str:
    """Serialize an event to one JSON line (no trailing newline).

    Always emits canonical eventids (``cowrie.login.failed``, never the
    ``failure`` alias); ``parse_event(serialize_event(e)) == e``.
    """
    data: dict[str, Any] = {"eventid": event.kind.value}
    for name in _CORE_FIELDS:
        value = getattr(event, name)
        data[name] = format_timestamp(value) if name == "timestamp" else value
    for name in _PAYLOAD_FIELDS:
        value = getattr(event, name)
        if value is not None:
            data[name] = value
    data.update(event.extra)
    return json.dumps(data, ensure_ascii=False)


class LoginAttempt(NamedTuple):
    at: datetime
    success: bool
    username: str
    password: str


class CommandEntry(NamedTuple):
    at: datetime
    input: str


@dataclass
class Session:
    """One attacker session reconstructed from its events."""

    id: str
    src_ip: str
    src_port: int
    connect_at: datetime
    closed_at: Optional[datetime] = None
    duration: Optional[float] = None
    login_outcomes: list[LoginAttempt] = field(default_factory=list)
    commands: list[CommandEntry] = field(default_factory=list)
    client_version: Optional[str] = None

    @property
    def closed(self) -> bool:
        return self.closed_at is not None


@dataclass
class SessionAssembly:
    """Result of grouping events into sessions.

    Orphans are events whose session id never saw a SessionConnect (or
    duplicate connect/close records); they are reported, never fatal.
    """

    sessions: list[Session]
    orphans: list[HoneypotEvent]


def _sort_key(event: HoneypotEvent):
    # Total order so assembly is invariant under input permutation even
    # when timestamps collide.
    return (
        event.timestamp,
        event.session,
        event.kind.value,
        event.username or "",
        event.password or "",
        event.input or "",
    )


def assemble_sessions(events: list[HoneypotEvent]) -> SessionAssembly:
    """Group events into Sessions keyed by session id.

    Input is sorted defensively. Open sessions (no SessionClosed) keep
    duration absent; the sensor-reported duration wins over the
    connect/close timestamp difference. BLOCKED_ATTEMPT events never form
    sessions and are ignored here (metrics count them straight from the
    store).
    """
    by_id: dict[str, Session] = {}
    orphans: list[HoneypotEvent] = []
    for event in sorted(events, key=_sort_key):
        if event.kind is EventKind.BLOCKED_ATTEMPT:
            continue
        if event.kind is EventKind.SESSION_CONNECT:
            if event.session in by_id:
                orphans.append(event)  # duplicate connect
                continue
            by_id[event.session] = Session(
                id=event.session,
                src_ip=event.src_ip,
                src_port=event.src_port,
                connect_at=event.timestamp,
            )
            continue
        session = by_id.get(event.session)
        if session is None:
            orphans.append(event)
            continue
        if event.kind in LOGIN_KINDS:
            session.login_outcomes.append(
                LoginAttempt(
                    at=event.timestamp,
                    success=event.kind is EventKind.LOGIN_SUCCESS,
                    username=event.username or "",
                    password=event.password or "",
                )
            )
        elif event.kind is EventKind.COMMAND_INPUT:
            session.commands.append(CommandEntry(at=event.timestamp, input=event.input or ""))
        elif event.kind is EventKind.SESSION_CLOSED:
            if session.closed_at is not None:
                orphans.append(event)  # duplicate close
                continue
            session.closed_at = event.timestamp
            session.duration = event.duration
        elif event.kind is EventKind.CLIENT_VERSION:
            session.client_version = event.version
        # CLIENT_KEX contributes nothing beyond its own event record.
    sessions = sorted(by_id.values(), key=lambda s: (s.connect_at, s.id))
    return SessionAssembly(sessions=sessions, orphans=orphans)
