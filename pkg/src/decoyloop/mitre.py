"""ATT&CK tagging: event kind -> (tactic, technique) plus command classification.

Login failures map to Credential Access / T1110, successes to Initial
Access / T1078, client version+kex probes to Reconnaissance / T1046, and
command input is classified into T1059/T1082/T1083/T1087 by a
first-match-wins pattern table. The default table ships in code and can
be replaced from a YAML config; the pattern order is fixed and versioned
because reordering changes results.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import yaml

from .events import EventKind, HoneypotEvent

_TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")

CLASSIFIER_VERSION = "1"


class Tactic(Enum):
    INITIAL_ACCESS = "Initial Access"
    CREDENTIAL_ACCESS = "Credential Access"
    EXECUTION = "Execution"
    DISCOVERY = "Discovery"
    RECONNAISSANCE = "Reconnaissance"


# Accepted spellings when loading config / incident files ("Recon" is the
# short label some tooling uses; output always renders the long form).
_TACTIC_ALIASES = {
    "recon": Tactic.RECONNAISSANCE,
    "reconnaissance": Tactic.RECONNAISSANCE,
    "initial access": Tactic.INITIAL_ACCESS,
    "initialaccess": Tactic.INITIAL_ACCESS,
    "credential access": Tactic.CREDENTIAL_ACCESS,
    "credentialaccess": Tactic.CREDENTIAL_ACCESS,
    "execution": Tactic.EXECUTION,
    "discovery": Tactic.DISCOVERY,
}


def parse_tactic(label: str) -> Tactic:
    tactic = _TACTIC_ALIASES.get(label.strip().lower())
    if tactic is None:
        raise ValueError(f"unknown tactic label: {label!r}")
    return tactic


@dataclass(frozen=True)
class MitreTag:
    tactic: Tactic
    technique_id: str
    technique_name: str

    def __post_init__(self):
        if not _TECHNIQUE_ID_RE.match(self.technique_id):
            raise ValueError(f"bad technique id: {self.technique_id!r}")

    def to_dict(self) -> dict:
        return {
            "tactic": self.tactic.value,
            "technique_id": self.technique_id,
            "technique_name": self.technique_name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MitreTag":
        return cls(
            tactic=parse_tactic(data["tactic"]),
            technique_id=data["technique_id"],
            technique_name=data["technique_name"],
        )


TAG_BRUTE_FORCE = MitreTag(Tactic.CREDENTIAL_ACCESS, "T1110", "Brute Force")
TAG_VALID_ACCOUNTS = MitreTag(Tactic.INITIAL_ACCESS, "T1078", "Valid Accounts")
TAG_NETWORK_SERVICE_SCAN = MitreTag(Tactic.RECONNAISSANCE, "T1046", "Network Service Scan")
TAG_COMMAND_INTERPRETER = MitreTag(Tactic.EXECUTION, "T1059", "Command & Scripting Interpreter")
TAG_SYSTEM_INFO = MitreTag(Tactic.DISCOVERY, "T1082", "System Info Discovery")
TAG_FILE_DISCOVERY = MitreTag(Tactic.DISCOVERY, "T1083", "File & Directory Discovery")
TAG_ACCOUNT_DISCOVERY = MitreTag(Tactic.DISCOVERY, "T1087", "Account Discovery")


@dataclass(frozen=True)
class CommandPattern:
    """One classifier entry.

    match modes: ``command`` compares the first word of the input,
    ``prefix`` matches the start of the whole (stripped) input, and
    ``contains``/``regex`` behave as named.
    """

    match: str  # command | prefix | contains | regex
    pattern: str
    tag: MitreTag

    def matches(self, text: str) -> bool:
        stripped = text.strip()
        if self.match == "command":
            first = stripped.split(None, 1)[0] if stripped else ""
            return first == self.pattern
        if self.match == "prefix":
            return stripped.startswith(self.pattern)
        if self.match == "contains":
            return self.pattern in stripped
        if self.match == "regex":
            return re.search(self.pattern, stripped) is not None
        raise ValueError(f"unknown match mode: {self.match!r}")


@dataclass
class CommandClassifier:
    """Ordered first-match-wins command pattern list with a fixed fallback."""

    patterns: list[CommandPattern] = field(default_factory=list)
    fallback: MitreTag = TAG_COMMAND_INTERPRETER
    version: str = CLASSIFIER_VERSION

    def classify(self, text: str) -> MitreTag:
        for entry in self.patterns:
            if entry.matches(text):
                return entry.tag
        return self.fallback


def default_classifier() -> CommandClassifier:
    """Built-in pattern table. The two ``cat`` prefixes sit first because
    they are more specific than any single-command rule."""
    patterns = [
        CommandPattern("prefix", "cat /proc/version", TAG_SYSTEM_INFO),
        CommandPattern("prefix", "cat /etc/passwd", TAG_ACCOUNT_DISCOVERY),
        CommandPattern("command", "uname", TAG_SYSTEM_INFO),
        CommandPattern("command", "lscpu", TAG_SYSTEM_INFO),
        CommandPattern("command", "ls", TAG_FILE_DISCOVERY),
        CommandPattern("command", "find", TAG_FILE_DISCOVERY),
        CommandPattern("command", "tree", TAG_FILE_DISCOVERY),
        CommandPattern("command", "dir", TAG_FILE_DISCOVERY),
        CommandPattern("command", "whoami", TAG_ACCOUNT_DISCOVERY),
        CommandPattern("command", "id", TAG_ACCOUNT_DISCOVERY),
        CommandPattern("command", "w", TAG_ACCOUNT_DISCOVERY),
        CommandPattern("command", "last", TAG_ACCOUNT_DISCOVERY),
    ]
    return CommandClassifier(patterns=patterns)


def load_classifier(path: str) -> CommandClassifier:
    """Load a classifier pattern table from YAML.

    Schema::

        version: "1"
        fallback: {tactic: Execution, technique_id: T1059, technique_name: ...}
        patterns:
          - {match: command, pattern: uname, tactic: Discovery,
             technique_id: T1082, technique_name: System Info Discovery}
    """
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    patterns = []
    for raw in data.get("patterns", []):
        tag = MitreTag(
            tactic=parse_tactic(raw["tactic"]),
            technique_id=raw["technique_id"],
            technique_name=raw["technique_name"],
        )
        patterns.append(CommandPattern(match=raw.get("match", "command"), pattern=raw["pattern"], tag=tag))
    fallback = TAG_COMMAND_INTERPRETER
    if "fallback" in data:
        fallback = MitreTag.from_dict(data["fallback"])
    return CommandClassifier(
        patterns=patterns, fallback=fallback, version=str(data.get("version", CLASSIFIER_VERSION))
    )


def classify_command(text: str, classifier: Optional[CommandClassifier] = None) -> MitreTag:
    """Classify one command input; unmatched inputs fall back to T1059."""
    if not text:
        raise ValueError("empty command input")
    return (classifier or default_classifier()).classify(text)


def map_event(event: HoneypotEvent, classifier: Optional[CommandClassifier] = None) -> list[MitreTag]:
    """Tag one event. Total over every kind; unmapped kinds yield []."""
    kind = event.kind
    if kind is EventKind.LOGIN_FAILED:
        return [TAG_BRUTE_FORCE]
    if kind is EventKind.LOGIN_SUCCESS:
        return [TAG_VALID_ACCOUNTS]
    if kind in (EventKind.CLIENT_VERSION, EventKind.CLIENT_KEX):
        return [TAG_NETWORK_SERVICE_SCAN]
    if kind is EventKind.COMMAND_INPUT:
        return [classify_command(event.input or "", classifier)]
    return []


@dataclass
class TacticSummary:
    """Counts by tactic (one per incident per distinct tactic) and by
    technique (one per tag), both sorted descending."""

    tactic_counts: list[tuple[Tactic, int]]
    technique_counts: list[tuple[str, str, int]]  # (id, name, count)

    def total_tags(self) -> int:
        return sum(count for _, _, count in self.technique_counts)


def tactic_summary(incidents: Iterable) -> TacticSummary:
    """Summarize incident tags.

    An incident whose tags span k distinct tactics contributes 1 to each
    of those tactics; every individual tag contributes 1 to its technique
    row (multi-count semantics, so technique totals conserve tag counts).
    Accepts anything with a ``mitre_tags`` attribute or key.
    """
    tactic_counts: dict[Tactic, int] = {}
    technique_counts: dict[tuple[str, str], int] = {}
    for incident in incidents:
        tags = incident.mitre_tags if hasattr(incident, "mitre_tags") else incident["mitre_tags"]
        tags = [t if isinstance(t, MitreTag) else MitreTag.from_dict(t) for t in tags]
        for tactic in {t.tactic for t in tags}:
            tactic_counts[tactic] = tactic_counts.get(tactic, 0) + 1
        for tag in tags:
            key = (tag.technique_id, tag.technique_name)
            technique_counts[key] = technique_counts.get(key, 0) + 1
    return TacticSummary(
        tactic_counts=sorted(tactic_counts.items(), key=lambda kv: (-kv[1], kv[0].value)),
        technique_counts=sorted(
            ((tid, name, n) for (tid, name), n in technique_counts.items()),
            key=lambda row: (-row[2], row[0]),
        ),
    )


def summary_tactics_csv(summary: TacticSummary) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["tactic", "count"])
    for tactic, count in summary.tactic_counts:
        writer.writerow([tactic.value, count])
    return out.getvalue()


def summary_techniques_csv(summary: TacticSummary) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["technique_id", "technique_name", "count"])
    for tid, name, count in summary.technique_counts:
        writer.writerow([tid, name, count])
    return out.getvalue()


def summary_table(summary: TacticSummary) -> str:
    """Aligned-text rendering of the tactic table."""
    rows = [(t.value, str(n)) for t, n in summary.tactic_counts]
    width = max([len("Tactic")] + [len(r[0]) for r in rows])
    lines = [f"{'Tactic':<{width}}  Incidents", f"{'-' * width}  ---------"]
    lines += [f"{name:<{width}}  {count}" for name, count in rows]
    return "\n".join(lines) + "\n"
