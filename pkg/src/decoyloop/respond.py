"""Incident response: entity extraction, firewall blocking, SOC alerts.

Consumes Incidents, validates the offending source address against the
response policy, applies a deny rule with bounded retry, and records a
BlockAction carrying the two timing pairs the defense metrics need:

* orchestration delay: ``success_at - start_at`` (workflow begin to rule
  confirmed active);
* end-to-end delay: ``success_at - trigger_event_at`` (triggering event
  to rule active).

Every consumed incident yields exactly one BlockAction and at most one
SOC alert; skips and failures are outcomes, not exceptions.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import requests

from .detect import Incident, Severity
from .events import format_timestamp, parse_timestamp
from .firewall import FirewallError, RuleTable, WhitelistedAddress

logger = logging.getLogger(__name__)

ALERT_SCHEMA_VERSION = 1
AUTOMATION_FAILURE_FLAG = "CRITICAL-AUTOMATION-FAILURE"

# Ranges that are never block targets regardless of whitelist config:
# denying your own loopback/link-local/broadcast space is self-sabotage.
_NEVER_ROUTABLE = [
    ipaddress.ip_network(c)
    for c in (
        "0.0.0.0/8",
        "10.0.0.0/8",
        "100.64.0.0/10",
        "127.0.0.0/8",
        "169.254.0.0/16",
        "172.16.0.0/12",
        "192.168.0.0/16",
        "224.0.0.0/4",
        "255.255.255.255/32",
        "::/128",
        "::1/128",
        "fc00::/7",
        "fe80::/10",
        "ff00::/8",
    )
]


class Outcome(Enum):
    APPLIED = "applied"
    DUPLICATE = "duplicate"
    SKIPPED = "skipped"
    FAILED = "failed"


class SkipReason(Enum):
    BELOW_SEVERITY = "below_severity"
    BELOW_INTERACTION_THRESHOLD = "below_interaction_threshold"
    BELOW_SESSION_DURATION = "below_session_duration"
    INVALID_ADDRESS = "invalid_address"
    WHITELISTED = "whitelisted"
    NOT_GLOBALLY_ROUTABLE = "not_globally_routable"


@dataclass(frozen=True)
class ResponsePolicy:
    min_severity: Severity = Severity.HIGH
    whitelist: tuple[str, ...] = ()
    require_global: bool = True  # set False only for loopback test rigs
    interaction_threshold: int = 1
    min_session_duration: Optional[float] = None
    block_ttl: Optional[float] = None  # None -> firewall table default
    retry_attempts: int = 3
    retry_backoff: float = 0.25  # seconds; grows as backoff * 2^k
    dedupe_window: float = 3600.0

    def __post_init__(self):
        if self.retry_attempts < 1:
            raise ValueError("retry_attempts must be >= 1")
        if self.interaction_threshold < 0 or self.dedupe_window < 0:
            raise ValueError("thresholds must be >= 0")
        for cidr in self.whitelist:
            ipaddress.ip_network(cidr, strict=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ResponsePolicy":
        kwargs = {}
        if "min_severity" in data:
            kwargs["min_severity"] = Severity.parse(data["min_severity"])
        for key in (
            "whitelist",
            "require_global",
            "interaction_threshold",
            "min_session_duration",
            "block_ttl",
            "retry_attempts",
            "retry_backoff",
            "dedupe_window",
        ):
            if key in data and data[key] is not None:
                value = data[key]
                kwargs[key] = tuple(value) if key == "whitelist" else value
        return cls(**kwargs)


@dataclass
class DeliveryRecord:
    delivered: bool
    attempts: int
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {"delivered": self.delivered, "attempts": self.attempts, "error": self.error}


@dataclass
class BlockAction:
    incident_id: int
    ip: str
    start_at: datetime
    trigger_event_at: datetime
    outcome: Outcome
    success_at: Optional[datetime] = None
    reason: Optional[str] = None  # skip reason or failure error
    attempts: int = 0
    rule_name: Optional[str] = None
    soc_delivery: Optional[DeliveryRecord] = None

    @property
    def orchestration_delay(self) -> Optional[float]:
        if self.success_at is None:
            return None
        return (self.success_at - self.start_at).total_seconds()

    @property
    def end_to_end_delay(self) -> Optional[float]:
        if self.success_at is None:
            return None
        return (self.success_at - self.trigger_event_at).total_seconds()

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "ip": self.ip,
            "start_at": format_timestamp(self.start_at),
            "trigger_event_at": format_timestamp(self.trigger_event_at),
            "success_at": format_timestamp(self.success_at) if self.success_at else None,
            "outcome": self.outcome.value,
            "reason": self.reason,
            "attempts": self.attempts,
            "rule_name": self.rule_name,
            "soc_delivery": self.soc_delivery.to_dict() if self.soc_delivery else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BlockAction":
        delivery = data.get("soc_delivery")
        return cls(
            incident_id=int(data["incident_id"]),
            ip=str(data["ip"]),
            start_at=parse_timestamp(data["start_at"]),
            trigger_event_at=parse_timestamp(data["trigger_event_at"]),
            success_at=parse_timestamp(data["success_at"]) if data.get("success_at") else None,
            outcome=Outcome(data["outcome"]),
            reason=data.get("reason"),
            attempts=int(data.get("attempts", 0)),
            rule_name=data.get("rule_name"),
            soc_delivery=DeliveryRecord(**delivery) if delivery else None,
        )


def _routable(address) -> bool:
    return not any(address.version == n.version and address in n for n in _NEVER_ROUTABLE)


def extract_entities(incident: Incident, policy: ResponsePolicy) -> tuple[list[str], Optional[SkipReason]]:
    """Validate the incident's entity. Returns ([ip], None) when the
    address is syntactically valid, routable (when required), and not
    whitelisted; otherwise ([], reason)."""
    try:
        address = ipaddress.ip_address(incident.entity_ip)
    except ValueError:
        return [], SkipReason.INVALID_ADDRESS
    for cidr in policy.whitelist:
        network = ipaddress.ip_network(cidr, strict=False)
        if address.version == network.version and address in network:
            return [], SkipReason.WHITELISTED
    if policy.require_global and not _routable(address):
        return [], SkipReason.NOT_GLOBALLY_ROUTABLE
    return [address.compressed], None


def notify_soc(alert: dict, sink: Optional[str], timeout: float = 5.0) -> DeliveryRecord:
    """Deliver an alert to a webhook URL or append it to a file.

    One retry on transport failure; the result is recorded, never raised.
    A missing sink is recorded as undelivered with attempts=0.
    """
    if not sink:
        return DeliveryRecord(delivered=False, attempts=0, error="no sink configured")
    payload = json.dumps(alert)
    if sink.startswith(("http://", "https://")):
        error = None
        for attempt in range(1, 3):
            try:
                response = requests.post(
                    sink, data=payload, headers={"Content-Type": "application/json"}, timeout=timeout
                )
                if response.status_code < 300:
                    return DeliveryRecord(delivered=True, attempts=attempt)
                error = f"HTTP {response.status_code}"
            except requests.RequestException as exc:
                error = str(exc)
        return DeliveryRecord(delivered=False, attempts=2, error=error)
    try:
        with open(sink, "a", encoding="utf-8") as fh:
            fh.write(payload + "\n")
        return DeliveryRecord(delivered=True, attempts=1)
    except OSError as exc:
        return DeliveryRecord(delivered=False, attempts=1, error=str(exc))


def build_alert(incident: Incident, action: BlockAction) -> dict:
    return {
        "schema_version": ALERT_SCHEMA_VERSION,
        "incident": {
            "id": incident.id,
            "rule": incident.rule_name,
            "severity": incident.severity.label(),
            "entity_ip": incident.entity_ip,
            "first_event_at": format_timestamp(incident.first_event_at),
            "last_event_at": format_timestamp(incident.last_event_at),
            "command_history": incident.command_history[:20],
        },
        "mitre_tags": [t.to_dict() for t in incident.mitre_tags],
        "action": {
            "outcome": action.outcome.value,
            "reason": action.reason,
            "rule_name": action.rule_name,
            "attempts": action.attempts,
        },
        "timestamps": {
            "start_at": format_timestamp(action.start_at),
            "success_at": format_timestamp(action.success_at) if action.success_at else None,
            "trigger_event_at": format_timestamp(action.trigger_event_at),
        },
        "flag": AUTOMATION_FAILURE_FLAG if action.outcome is Outcome.FAILED else None,
    }


class ActionLog:
    """Durable newline-JSON log of every BlockAction (single writer)."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, action: BlockAction):
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(action.to_dict()) + "\n")

    def read(
        self, t0: Optional[datetime] = None, t1: Optional[datetime] = None
    ) -> list[BlockAction]:
        if not self.path.exists():
            return []
        actions = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                action = BlockAction.from_dict(json.loads(line))
                if t0 is not None and action.start_at < t0:
                    continue
                if t1 is not None and action.start_at >= t1:
                    continue
                actions.append(action)
        return actions


def load_actions(path: str) -> list[BlockAction]:
    return ActionLog(path).read()


class Orchestrator:
    """Single-consumer response loop over an incident channel."""

    def __init__(
        self,
        policy: ResponsePolicy,
        firewall: RuleTable,
        soc_sink: Optional[str] = None,
        action_log: Optional[ActionLog] = None,
        clock: Optional[Callable[[], datetime]] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.policy = policy
        self.firewall = firewall
        self.soc_sink = soc_sink
        self.action_log = action_log
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._sleep = sleep
        self._recent_blocks: dict[str, datetime] = {}  # ip -> last success_at
        self.actions: list[BlockAction] = []

    def handle_incident(self, incident: Incident) -> BlockAction:
        """Run the full decide/block/alert workflow for one incident."""
        start_at = self._clock()
        action = BlockAction(
            incident_id=incident.id,
            ip=incident.entity_ip,
            start_at=start_at,
            trigger_event_at=incident.last_event_at,
            outcome=Outcome.SKIPPED,
        )
        skip = self._policy_skip(incident)
        if skip is not None:
            action.reason = skip.value
        else:
            ips, reason = extract_entities(incident, self.policy)
            if reason is not None:
                action.reason = reason.value
            else:
                action = self._apply_block(action, ips[0], incident)
        action.soc_delivery = notify_soc(build_alert(incident, action), self.soc_sink)
        if self.action_log is not None:
            self.action_log.append(action)
        self.actions.append(action)
        return action

    def _policy_skip(self, incident: Incident) -> Optional[SkipReason]:
        if incident.severity < self.policy.min_severity:
            return SkipReason.BELOW_SEVERITY
        if len(incident.matched_events) < self.policy.interaction_threshold:
            return SkipReason.BELOW_INTERACTION_THRESHOLD
        if self.policy.min_session_duration is not None:
            span = (incident.last_event_at - incident.first_event_at).total_seconds()
            if span < self.policy.min_session_duration:
                return SkipReason.BELOW_SESSION_DURATION
        return None

    def _apply_block(self, action: BlockAction, ip: str, incident: Incident) -> BlockAction:
        recent = self._recent_blocks.get(ip)
        if recent is not None:
            age = (action.start_at - recent).total_seconds()
            if age < self.policy.dedupe_window:
                action.outcome = Outcome.DUPLICATE
                action.success_at = self._clock()
                action.reason = "deduped"
                return action
        last_error = "unknown"
        for attempt in range(1, self.policy.retry_attempts + 1):
            action.attempts = attempt
            try:
                rule, created = self.firewall.upsert_deny(
                    ip, ttl=self.policy.block_ttl, provenance=f"incident-{incident.id}"
                )
                if not self.firewall.is_blocked(ip, 22):
                    raise FirewallError("rule not active after upsert")
                action.success_at = self._clock()
                action.rule_name = rule.name
                action.outcome = Outcome.APPLIED if created else Outcome.DUPLICATE
                self._recent_blocks[ip] = action.success_at
                return action
            except WhitelistedAddress:
                action.outcome = Outcome.SKIPPED
                action.reason = SkipReason.WHITELISTED.value
                return action
            except Exception as exc:
                last_error = str(exc)
                logger.warning("block attempt %d for %s failed: %s", attempt, ip, exc)
                if attempt < self.policy.retry_attempts:
                    self._sleep(self.policy.retry_backoff * (2 ** (attempt - 1)))
        action.outcome = Outcome.FAILED
        action.reason = last_error
        return action

    def run(self, incidents: "queue.Queue[Incident]", stop_event: threading.Event, poll_timeout: float = 0.1):
        """Consume incidents until stopped; nothing escapes the loop."""
        while not stop_event.is_set():
            try:
                incident = incidents.get(timeout=poll_timeout)
            except queue.Empty:
                continue
            try:
                self.handle_incident(incident)
            except Exception:
                logger.exception("incident %s handling crashed", getattr(incident, "id", "?"))
