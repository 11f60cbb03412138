"""Declarative analytic rules over the live event stream.

A rule selects event kinds (with optional payload predicates), groups by
source IP, and fires when the count inside a sliding event-time window
reaches its threshold. Firing semantics, precisely:

* events are evaluated on arrival; a rule fires when the trailing window
  ``[t_new - window, t_new]`` (boundary inclusive) holds >= threshold
  matching events for that entity — i.e. at the earliest span that ever
  qualifies;
* the match set is every matching event inside that trailing window;
* after a fire, the (rule, entity) pair is in cooldown: fires whose
  triggering event is less than ``cooldown`` seconds after the previous
  fire's triggering event are suppressed and counted. Cooldown runs on
  event time so that replaying a log reproduces the same incidents.

Windows and thresholds are engineering defaults, not measured constants;
every one of them is a documented tunable.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import IntEnum
from typing import Callable, Iterable, Optional

import yaml

from .events import EventKind, HoneypotEvent, format_timestamp, parse_timestamp
from .mitre import CommandClassifier, MitreTag, map_event

logger = logging.getLogger(__name__)

OUT_OF_ORDER_TOLERANCE = 5.0
DEFAULT_COOLDOWN = 300.0


class RulesetError(Exception):
    pass


class RuleSyntax(RulesetError):
    def __init__(self, field_name: str, detail: str = "", rule: str = ""):
        self.field_name = field_name
        self.rule = rule
        where = f" in rule {rule!r}" if rule else ""
        super().__init__(f"{field_name}{where}: {detail}" if detail else f"{field_name}{where}")


class DuplicateName(RulesetError):
    pass


class Severity(IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    CRITICAL = 4

    @classmethod
    def parse(cls, label: str) -> "Severity":
        try:
            return cls[str(label).strip().upper()]
        except KeyError:
            raise RuleSyntax("severity", f"unknown severity {label!r}") from None

    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class FieldPredicate:
    """Payload-field predicate: equality, substring, or regex."""

    field_name: str  # username, password, input, version, kex_fingerprint, message
    op: str  # eq | contains | regex
    value: str

    def matches(self, event: HoneypotEvent) -> bool:
        actual = getattr(event, self.field_name, None)
        if actual is None:
            actual = event.extra.get(self.field_name)
        if actual is None:
            return False
        text = str(actual)
        if self.op == "eq":
            return text == self.value
        if self.op == "contains":
            return self.value in text
        if self.op == "regex":
            return re.search(self.value, text) is not None
        raise RuleSyntax("where", f"unknown predicate op {self.op!r}")


@dataclass(frozen=True)
class DetectionRule:
    name: str
    select: frozenset[EventKind]
    threshold: int
    window: float  # seconds
    severity: Severity
    where: tuple[FieldPredicate, ...] = ()
    cooldown: float = DEFAULT_COOLDOWN
    attach_mitre: bool = True
    group_by: str = "src_ip"  # fixed; the response plane acts on source IPs

    def __post_init__(self):
        if not self.name:
            raise RuleSyntax("name", "must be non-empty")
        if self.threshold < 1:
            raise RuleSyntax("threshold", "must be >= 1", self.name)
        if self.window <= 0:
            raise RuleSyntax("window", "must be > 0", self.name)
        if self.cooldown < 0:
            raise RuleSyntax("cooldown", "must be >= 0", self.name)
        if self.group_by != "src_ip":
            raise RuleSyntax("group_by", "only src_ip grouping is supported", self.name)
        if not self.select:
            raise RuleSyntax("select", "must name at least one event kind", self.name)

    def selects(self, event: HoneypotEvent) -> bool:
        return event.kind in self.select and all(p.matches(event) for p in self.where)


@dataclass
class Ruleset:
    rules: list[DetectionRule]
    version: str = "default"

    def __post_init__(self):
        seen = set()
        for rule in self.rules:
            if rule.name in seen:
                raise DuplicateName(rule.name)
            seen.add(rule.name)


def default_ruleset() -> Ruleset:
    """The four built-in rules; thresholds/windows are tunables."""
    return Ruleset(
        rules=[
            DetectionRule(
                name="BruteForce",
                select=frozenset({EventKind.LOGIN_FAILED}),
                threshold=5,
                window=60.0,
                severity=Severity.HIGH,
            ),
            DetectionRule(
                name="SuccessfulLogin",
                select=frozenset({EventKind.LOGIN_SUCCESS}),
                threshold=1,
                window=1.0,
                severity=Severity.CRITICAL,
            ),
            DetectionRule(
                name="CommandExecution",
                select=frozenset({EventKind.COMMAND_INPUT}),
                threshold=1,
                window=1.0,
                severity=Severity.HIGH,
            ),
            DetectionRule(
                name="Recon",
                select=frozenset({EventKind.CLIENT_VERSION, EventKind.CLIENT_KEX}),
                threshold=3,
                window=60.0,
                severity=Severity.MEDIUM,
            ),
        ],
        version="builtin-1",
    )


_WIRE_KINDS = {k.value: k for k in EventKind}
_WIRE_KINDS["cowrie.login.failure"] = EventKind.LOGIN_FAILED


def _parse_rule(raw: dict) -> DetectionRule:
    name = str(raw.get("name", ""))
    if not name:
        raise RuleSyntax("name", "missing")
    select = set()
    for wire in raw.get("select", []):
        kind = _WIRE_KINDS.get(str(wire))
        if kind is None:
            raise RuleSyntax("select", f"unknown eventid {wire!r}", name)
        select.add(kind)
    predicates = []
    for clause in raw.get("where", []):
        if not isinstance(clause, dict) or not {"field", "op", "value"} <= set(clause):
            raise RuleSyntax("where", "each clause needs field/op/value", name)
        if clause["op"] not in ("eq", "contains", "regex"):
            raise RuleSyntax("where", f"unknown op {clause['op']!r}", name)
        predicates.append(FieldPredicate(str(clause["field"]), str(clause["op"]), str(clause["value"])))
    try:
        threshold = int(raw.get("threshold", 1))
        window = float(raw.get("window", 0))
        cooldown = float(raw.get("cooldown", DEFAULT_COOLDOWN))
    except (TypeError, ValueError) as exc:
        raise RuleSyntax("threshold/window/cooldown", str(exc), name) from None
    return DetectionRule(
        name=name,
        select=frozenset(select),
        threshold=threshold,
        window=window,
        severity=Severity.parse(raw.get("severity", "Low")),
        where=tuple(predicates),
        cooldown=cooldown,
        attach_mitre=bool(raw.get("attach_mitre", True)),
    )


def load_ruleset(path: str) -> Ruleset:
    """Load rules from YAML. See data/ruleset.yaml for a worked example."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    rules = [_parse_rule(raw) for raw in data.get("rules", [])]
    return Ruleset(rules=rules, version=str(data.get("version", "file")))


# -- incidents -----------------------------------------------------------------


@dataclass
class Incident:
    id: int
    rule_name: str
    severity: Severity
    entity_ip: str
    first_event_at: datetime
    last_event_at: datetime
    created_at: datetime
    matched_events: list[HoneypotEvent]
    command_history: list[str] = field(default_factory=list)
    mitre_tags: list[MitreTag] = field(default_factory=list)

    def to_dict(self) -> dict:
        from .events import serialize_event

        return {
            "id": self.id,
            "rule_name": self.rule_name,
            "severity": self.severity.label(),
            "entity_ip": self.entity_ip,
            "first_event_at": format_timestamp(self.first_event_at),
            "last_event_at": format_timestamp(self.last_event_at),
            "created_at": format_timestamp(self.created_at),
            "matched_events": [json.loads(serialize_event(e)) for e in self.matched_events],
            "command_history": list(self.command_history),
            "mitre_tags": [t.to_dict() for t in self.mitre_tags],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Incident":
        from .events import parse_event

        return cls(
            id=int(data["id"]),
            rule_name=str(data["rule_name"]),
            severity=Severity.parse(data["severity"]),
            entity_ip=str(data["entity_ip"]),
            first_event_at=parse_timestamp(data["first_event_at"]),
            last_event_at=parse_timestamp(data["last_event_at"]),
            created_at=parse_timestamp(data["created_at"]),
            matched_events=[parse_event(json.dumps(e)) for e in data.get("matched_events", [])],
            command_history=list(data.get("command_history", [])),
            mitre_tags=[MitreTag.from_dict(t) for t in data.get("mitre_tags", [])],
        )


def evaluate(rule: DetectionRule, entity_events: list[HoneypotEvent]) -> Optional[list[HoneypotEvent]]:
    """Offline single-rule evaluation over one entity's events.

    Returns the earliest qualifying span's match set, or None. Cooldown
    does not apply here (one-shot evaluation)."""
    detector = Detector(Ruleset(rules=[rule]), classifier=None)
    for event in sorted(entity_events, key=lambda e: e.timestamp):
        incidents = detector.process(event)
        if incidents:
            return incidents[0].matched_events
    return None


class Detector:
    """Streaming rule evaluator with per-(rule, entity) state."""

    def __init__(
        self,
        ruleset: Optional[Ruleset] = None,
        classifier: Optional[CommandClassifier] = None,
        clock: Optional[Callable[[], datetime]] = None,
    ):
        self.ruleset = ruleset or default_ruleset()
        self.classifier = classifier
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._next_id = 1
        # (rule_name, entity) -> time-sorted matching events not yet expired
        self._buffers: dict[tuple[str, str], list[HoneypotEvent]] = {}
        # (rule_name, entity) -> trigger timestamp of the last fire
        self._last_fire: dict[tuple[str, str], datetime] = {}
        # entity -> recent CommandInput events (for incident command history)
        self._commands: dict[str, list[HoneypotEvent]] = {}
        self._max_window = max((r.window for r in self.ruleset.rules), default=60.0)
        self.suppressed_fires = 0
        self.late_events = 0
        self._max_seen: Optional[datetime] = None

    def process(self, event: HoneypotEvent) -> list[Incident]:
        """Feed one event; returns incidents fired by it (usually 0 or 1)."""
        if self._max_seen is not None:
            lateness = (self._max_seen - event.timestamp).total_seconds()
            if lateness > OUT_OF_ORDER_TOLERANCE:
                self.late_events += 1
        if self._max_seen is None or event.timestamp > self._max_seen:
            self._max_seen = event.timestamp

        if event.kind is EventKind.COMMAND_INPUT:
            history = self._commands.setdefault(event.src_ip, [])
            history.append(event)
            cutoff = event.timestamp - timedelta(seconds=self._max_window)
            self._commands[event.src_ip] = [e for e in history if e.timestamp >= cutoff]

        incidents = []
        for rule in self.ruleset.rules:
            if not rule.selects(event):
                continue
            incident = self._feed_rule(rule, event)
            if incident is not None:
                incidents.append(incident)
        return incidents

    def _feed_rule(self, rule: DetectionRule, event: HoneypotEvent) -> Optional[Incident]:
        key = (rule.name, event.src_ip)
        buffer = self._buffers.setdefault(key, [])
        # insert keeping time order (out-of-order arrivals are tolerated)
        index = len(buffer)
        while index > 0 and buffer[index - 1].timestamp > event.timestamp:
            index -= 1
        buffer.insert(index, event)

        newest = buffer[-1].timestamp
        cutoff = newest - timedelta(seconds=rule.window)
        while buffer and buffer[0].timestamp < cutoff:
            buffer.pop(0)
        if len(buffer) < rule.threshold:
            return None

        trigger_at = newest
        last_fire = self._last_fire.get(key)
        if last_fire is not None:
            elapsed = (trigger_at - last_fire).total_seconds()
            if elapsed < rule.cooldown:
                self.suppressed_fires += 1
                return None
        self._last_fire[key] = trigger_at

        matched = list(buffer)
        first_at = matched[0].timestamp
        commands = [
            e.input or ""
            for e in self._commands.get(event.src_ip, [])
            if trigger_at - timedelta(seconds=rule.window) <= e.timestamp <= trigger_at
        ]
        incident = Incident(
            id=self._next_id,
            rule_name=rule.name,
            severity=rule.severity,
            entity_ip=event.src_ip,
            first_event_at=first_at,
            last_event_at=trigger_at,
            created_at=self._clock(),
            matched_events=matched,
            command_history=commands,
            mitre_tags=self._tags_for(matched) if rule.attach_mitre else [],
        )
        self._next_id += 1
        return incident

    def _tags_for(self, matched: list[HoneypotEvent]) -> list[MitreTag]:
        tags: list[MitreTag] = []
        for event in matched:
            for tag in map_event(event, self.classifier):
                if tag not in tags:
                    tags.append(tag)
        return tags


@dataclass
class IncidentSinkStats:
    delivered: int = 0
    dead_lettered: int = 0


class IncidentWriter:
    """Newline-JSON incident sink with a dead-letter fallback."""

    def __init__(self, path: str, dead_letter_path: Optional[str] = None):
        self.path = path
        self.dead_letter_path = dead_letter_path or path + ".deadletter"
        self.stats = IncidentSinkStats()
        self._lock = threading.Lock()

    def __call__(self, incident: Incident):
        line = json.dumps(incident.to_dict()) + "\n"
        with self._lock:
            for attempt in range(3):
                try:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(line)
                    self.stats.delivered += 1
                    return
                except OSError:
                    continue
            with open(self.dead_letter_path, "a", encoding="utf-8") as fh:
                fh.write(line)
            self.stats.dead_lettered += 1
            logger.error("incident %d dead-lettered", incident.id)


def run_detector(
    detector: Detector,
    subscription,
    sinks: Iterable[Callable[[Incident], None]],
    stop_event: threading.Event,
    poll_timeout: float = 0.1,
):
    """Consume a store subscription until stopped, fanning incidents out to
    sinks. Sink exceptions are contained (logged), never fatal."""
    sinks = list(sinks)
    while not stop_event.is_set():
        event = subscription.get(timeout=poll_timeout)
        if event is None:
            continue
        for incident in detector.process(event):
            for sink in sinks:
                try:
                    sink(incident)
                except Exception:
                    logger.exception("incident sink failed for incident %d", incident.id)
