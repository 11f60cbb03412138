"""NSG-style enforcement backend: priority-ordered allow/deny rules.

Lower priority number evaluates first, first match wins, default
disposition Allow (the honeypot must stay reachable). The table is the
single enforcement authority: the sensor's blocked-IP check, the
orchestrator's deny upserts, and the mock REST API all go through it.
Every mutation is audited and snapshotted to disk so block state survives
restarts.
"""

from __future__ import annotations

import ipaddress
import json
import os
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Optional

from .events import format_timestamp, parse_timestamp

MIN_PRIORITY = 100
MAX_PRIORITY = 4096

DEFAULT_DENY_TTL = 24 * 3600.0

#: Addresses that must never be denied unless the operator overrides the
#: whitelist: private ranges and loopback (blocking management space is
#: the classic self-DoS failure).
DEFAULT_WHITELIST = (
    "10.0.0.0/8",
    "172.16.0.0/12",
    "192.168.0.0/16",
    "127.0.0.0/8",
    "::1/128",
)


class FirewallError(Exception):
    pass


class WhitelistedAddress(FirewallError):
    """Refused: the target address sits inside a protected CIDR."""


class PriorityExhausted(FirewallError):
    """No free priority slot in 100..4096 remains."""


class PriorityConflict(FirewallError):
    """Another active rule already occupies the requested priority."""


class RuleValidation(FirewallError):
    """Rule field failed validation (names the field)."""


class StaleVersion(FirewallError):
    """Optimistic-concurrency failure: If-Match did not match current etag."""


ALLOW = "Allow"
DENY = "Deny"


@dataclass(frozen=True)
class FirewallRule:
    name: str
    priority: int
    access: str  # Allow | Deny
    source: str  # CIDR, v4 or v6
    destination_port_range: str = "*"  # "22", "1000-2000" or "*"
    protocol: str = "Tcp"  # Tcp | Any
    direction: str = "Inbound"
    expires_at: Optional[datetime] = None
    created_at: Optional[datetime] = None
    provenance: str = "manual"

    def __post_init__(self):
        if not self.name:
            raise RuleValidation("name: must be non-empty")
        if not isinstance(self.priority, int) or not MIN_PRIORITY <= self.priority <= MAX_PRIORITY:
            raise RuleValidation(f"priority: must be {MIN_PRIORITY}..{MAX_PRIORITY}, got {self.priority!r}")
        if self.access not in (ALLOW, DENY):
            raise RuleValidation(f"access: must be Allow or Deny, got {self.access!r}")
        if self.direction != "Inbound":
            raise RuleValidation(f"direction: only Inbound is supported, got {self.direction!r}")
        if self.protocol not in ("Tcp", "Any"):
            raise RuleValidation(f"protocol: must be Tcp or Any, got {self.protocol!r}")
        try:
            ipaddress.ip_network(self.source, strict=False)
        except ValueError:
            raise RuleValidation(f"source: not a valid CIDR: {self.source!r}") from None
        _parse_port_range(self.destination_port_range)

    def matches(self, ip: str, port: int, protocol: str) -> bool:
        if self.protocol != "Any" and self.protocol != protocol:
            return False
        lo, hi = _parse_port_range(self.destination_port_range)
        if not lo <= port <= hi:
            return False
        address = ipaddress.ip_address(ip)
        network = ipaddress.ip_network(self.source, strict=False)
        return address.version == network.version and address in network

    def expired(self, now: datetime) -> bool:
        return self.expires_at is not None and self.expires_at <= now

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "priority": self.priority,
            "direction": self.direction,
            "access": self.access,
            "sourceAddressPrefix": self.source,
            "destinationPortRange": self.destination_port_range,
            "protocol": self.protocol,
            "expiresAt": format_timestamp(self.expires_at) if self.expires_at else None,
            "createdAt": format_timestamp(self.created_at) if self.created_at else None,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FirewallRule":
        def get(*names):
            for name in names:
                if name in data and data[name] is not None:
                    return data[name]
            return None

        expires = get("expiresAt", "expires_at")
        created = get("createdAt", "created_at")
        return cls(
            name=get("name") or "",
            priority=get("priority") if isinstance(get("priority"), int) else _as_int(get("priority")),
            access=_canonical_choice(get("access"), (ALLOW, DENY)),
            source=get("sourceAddressPrefix", "source") or "",
            destination_port_range=str(get("destinationPortRange", "destination_port_range") or "*"),
            protocol=_canonical_choice(get("protocol") or "Tcp", ("Tcp", "Any")),
            direction=get("direction") or "Inbound",
            expires_at=parse_timestamp(expires) if expires else None,
            created_at=parse_timestamp(created) if created else None,
            provenance=str(get("provenance") or "manual"),
        )


def _as_int(value) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise RuleValidation(f"priority: expected integer, got {value!r}") from None


def _canonical_choice(value, choices) -> str:
    if isinstance(value, str):
        for choice in choices:
            if value.lower() == choice.lower():
                return choice
    raise RuleValidation(f"expected one of {choices}, got {value!r}")


def _parse_port_range(text: str) -> tuple[int, int]:
    if text == "*":
        return 0, 65535
    try:
        if "-" in text:
            lo_s, hi_s = text.split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
        else:
            lo = hi = int(text)
    except ValueError:
        raise RuleValidation(f"destination_port_range: bad range {text!r}") from None
    if not (0 <= lo <= hi <= 65535):
        raise RuleValidation(f"destination_port_range: out of order or range: {text!r}")
    return lo, hi


@dataclass(frozen=True)
class Decision:
    access: str
    matched_rule: Optional[FirewallRule] = None

    @property
    def denied(self) -> bool:
        return self.access == DENY


@dataclass
class AuditRecord:
    at: datetime
    action: str  # create | replace | delete | expire | duplicate | refuse
    rule_name: str
    detail: str
    provenance: str

    def to_dict(self) -> dict:
        return {
            "at": format_timestamp(self.at),
            "action": self.action,
            "rule_name": self.rule_name,
            "detail": self.detail,
            "provenance": self.provenance,
        }


class RuleTable:
    """Priority-unique active rule set with audit log and JSON snapshot.

    All reads and writes serialize through one lock; `decide` is cheap
    (sorted scan over active rules) and safe to call from sensor
    connection threads. `clock` is injectable so model-check tests can
    drive virtual time.
    """

    def __init__(
        self,
        snapshot_path: Optional[str] = None,
        whitelist: tuple[str, ...] = DEFAULT_WHITELIST,
        default_ttl: float = DEFAULT_DENY_TTL,
        clock: Optional[Callable[[], datetime]] = None,
    ):
        self._lock = threading.RLock()
        self._rules: dict[str, FirewallRule] = {}
        self._audit: list[AuditRecord] = []
        self._etags: dict[str, str] = {}
        self._etag_seq = 0
        self.snapshot_path = snapshot_path
        self.default_ttl = default_ttl
        self.whitelist = [ipaddress.ip_network(c) for c in whitelist]
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        if snapshot_path:
            parent = os.path.dirname(os.path.abspath(snapshot_path))
            os.makedirs(parent, exist_ok=True)
            if os.path.exists(snapshot_path):
                self._load_snapshot()

    # -- queries ------------------------------------------------------------

    def now(self) -> datetime:
        return self._clock()

    def decide(self, src_ip: str, dst_port: int, protocol: str = "Tcp") -> Decision:
        """First-match evaluation over active, unexpired rules in ascending
        priority order; no match means the default Allow."""
        ipaddress.ip_address(src_ip)  # validate early
        now = self.now()
        with self._lock:
            candidates = sorted(
                (r for r in self._rules.values() if not r.expired(now)),
                key=lambda r: r.priority,
            )
        for rule in candidates:
            if rule.matches(src_ip, dst_port, protocol):
                return Decision(access=rule.access, matched_rule=rule)
        return Decision(access=ALLOW)

    def is_blocked(self, src_ip: str, dst_port: int = 0, protocol: str = "Tcp") -> bool:
        return self.decide(src_ip, dst_port, protocol).denied

    def rules(self, include_expired: bool = False) -> list[FirewallRule]:
        now = self.now()
        with self._lock:
            rules = list(self._rules.values())
        if not include_expired:
            rules = [r for r in rules if not r.expired(now)]
        return sorted(rules, key=lambda r: r.priority)

    def get(self, name: str) -> Optional[FirewallRule]:
        with self._lock:
            return self._rules.get(name)

    def etag(self, name: str) -> Optional[str]:
        with self._lock:
            return self._etags.get(name)

    def audit_log(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._audit)

    def is_whitelisted(self, ip_or_cidr: str) -> bool:
        try:
            network = ipaddress.ip_network(ip_or_cidr, strict=False)
        except ValueError:
            return False
        return any(
            network.version == w.version and network.overlaps(w) for w in self.whitelist
        )

    # -- mutations ----------------------------------------------------------

    def upsert_deny(
        self, ip: str, ttl: Optional[float] = None, provenance: str = "manual"
    ) -> tuple[FirewallRule, bool]:
        """Deny a single address; returns (rule, created).

        Idempotent: an active deny for exactly this /32 (or /128) is
        returned unchanged and the duplicate request is audited. The rule
        takes the lowest free priority >= 100 and expires after ttl
        (table default when omitted; ttl=0 disables expiry).
        """
        address = ipaddress.ip_address(ip)
        cidr = f"{address.compressed}/{32 if address.version == 4 else 128}"
        with self._lock:
            now = self.now()
            if self.is_whitelisted(ip):
                self._record(now, "refuse", "", f"whitelisted address {ip}", provenance)
                raise WhitelistedAddress(ip)
            self._drop_expired(now)
            for rule in self._rules.values():
                if rule.access == DENY and rule.source == cidr:
                    self._record(now, "duplicate", rule.name, f"deny already active for {ip}", provenance)
                    return rule, False
            ttl_value = self.default_ttl if ttl is None else ttl
            expires = None
            if ttl_value and ttl_value > 0:
                expires = datetime.fromtimestamp(now.timestamp() + ttl_value, tz=timezone.utc)
            rule = FirewallRule(
                name=self._deny_name(address),
                priority=self._lowest_free_priority(),
                access=DENY,
                source=cidr,
                destination_port_range="*",
                protocol="Tcp",
                expires_at=expires,
                created_at=now,
                provenance=provenance,
            )
            self._rules[rule.name] = rule
            self._bump_etag(rule.name)
            self._record(now, "create", rule.name, f"deny {cidr} prio {rule.priority}", provenance)
            self._save_snapshot()
            return rule, True

    def put_rule(self, rule: FirewallRule, if_match: Optional[str] = None) -> tuple[FirewallRule, bool]:
        """Create or replace a named rule; returns (rule, created).

        Enforces priority uniqueness among active rules and refuses deny
        rules whose source overlaps the whitelist. ``if_match`` gives
        optimistic concurrency (stale tag -> PriorityConflict is not
        raised; a dedicated StaleVersion signal is)."""
        with self._lock:
            now = self.now()
            self._drop_expired(now)
            existing = self._rules.get(rule.name)
            if if_match is not None and self._etags.get(rule.name) != if_match:
                raise StaleVersion(rule.name)
            if rule.access == DENY and self.is_whitelisted(rule.source):
                self._record(now, "refuse", rule.name, f"whitelisted source {rule.source}", rule.provenance)
                raise WhitelistedAddress(rule.source)
            for other in self._rules.values():
                if other.name != rule.name and other.priority == rule.priority:
                    raise PriorityConflict(f"priority {rule.priority} held by {other.name!r}")
            if rule.created_at is None:
                rule = replace(rule, created_at=now)
            self._rules[rule.name] = rule
            self._bump_etag(rule.name)
            action = "replace" if existing else "create"
            self._record(now, action, rule.name, f"{rule.access} {rule.source} prio {rule.priority}", rule.provenance)
            self._save_snapshot()
            return rule, existing is None


    def delete_rule(self, name: str, provenance: str = "manual") -> FirewallRule:
        with self._lock:
            now = self.now()
            rule = self._rules.pop(name, None)
            if rule is None:
                raise KeyError(name)
            self._etags.pop(name, None)
            self._record(now, "delete", name, f"removed {rule.access} {rule.source}", provenance)
            self._save_snapshot()
            return rule

    def expire_rules(self, now: Optional[datetime] = None) -> list[FirewallRule]:
        """Remove every rule with expires_at <= now (boundary inclusive)."""
        with self._lock:
            return self._drop_expired(now or self.now())

    # -- internals ----------------------------------------------------------

    def _drop_expired(self, now: datetime) -> list[FirewallRule]:
        removed = [r for r in self._rules.values() if r.expired(now)]
        for rule in removed:
            del self._rules[rule.name]
            self._etags.pop(rule.name, None)
            self._record(now, "expire", rule.name, f"expired at {format_timestamp(rule.expires_at)}", rule.provenance)
        if removed:
            self._save_snapshot()
        return sorted(removed, key=lambda r: r.priority)

    def _lowest_free_priority(self) -> int:
        taken = {r.priority for r in self._rules.values()}
        for priority in range(MIN_PRIORITY, MAX_PRIORITY + 1):
            if priority not in taken:
                return priority
        raise PriorityExhausted(f"all priorities {MIN_PRIORITY}..{MAX_PRIORITY} in use")

    def _deny_name(self, address) -> str:
        base = "deny-" + address.compressed.replace(".", "-").replace(":", "-")
        if base not in self._rules:
            return base
        suffix = 2
        while f"{base}-{suffix}" in self._rules:
            suffix += 1
        return f"{base}-{suffix}"

    def _bump_etag(self, name: str):
        self._etag_seq += 1
        self._etags[name] = f'W/"{self._etag_seq}"'

    def _record(self, at: datetime, action: str, rule_name: str, detail: str, provenance: str):
        record = AuditRecord(at=at, action=action, rule_name=rule_name, detail=detail, provenance=provenance)
        self._audit.append(record)
        if self.snapshot_path:
            audit_path = self.snapshot_path + ".audit.jsonl"
            with open(audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict()) + "\n")

    def _save_snapshot(self):
        if not self.snapshot_path:
            return
        payload = {
            "rules": [r.to_dict() for r in sorted(self._rules.values(), key=lambda r: r.priority)],
            "etag_seq": self._etag_seq,
        }
        tmp = self.snapshot_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, self.snapshot_path)

    def _load_snapshot(self):
        with open(self.snapshot_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        for raw in payload.get("rules", []):
            rule = FirewallRule.from_dict(raw)
            self._rules[rule.name] = rule
            self._bump_etag(rule.name)
        self._etag_seq = max(self._etag_seq, int(payload.get("etag_seq", 0)))


class NullFirewall:
    """Block-query stand-in for sensors running without enforcement."""

    def is_blocked(self, src_ip: str, dst_port: int = 0, protocol: str = "Tcp") -> bool:
        return False
