"""Attack- and defense-side metrics plus report rendering.

Attack side: total attacks (session connects), successful and failed
logins, per-session engagement durations with mean/median and an
IQR-trimmed mean (upper fence only, Q1/Q3 by linear interpolation
between closest ranks — the common "type 7" quantile). Defense side:
per-action block delay (orchestration start to confirmed rule), its
median and mean (MTTB), p95, and the same statistics for the end-to-end
trigger-to-block delay.

Rendering is deterministic: identical report values produce identical
bytes. Counts print as integers, seconds with 2 decimals, the
failure-to-success ratio as "N.N:1". The block-delay figures are
orchestration-internal by definition; the end-to-end numbers are
reported alongside so readers can compare both interpretations.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .events import EventKind, HoneypotEvent, Session, format_timestamp
from .mitre import TacticSummary, tactic_summary
from .respond import BlockAction

REPORT_FORMATS = ("csv", "markdown", "json")


class UnknownFormat(ValueError):
    pass


@dataclass(frozen=True)
class IqrFilter:
    """Upper-fence outlier trim: keep values <= Q3 + k*IQR (inclusive).

    Short sessions are never removed; instant scanners are signal, not
    noise."""

    k: float = 1.5

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be > 0")


@dataclass
class AttackCounts:
    total: int = 0
    successful: int = 0
    failed: int = 0

    @property
    def ratio(self) -> Optional[float]:
        if self.successful == 0:
            return None
        return self.failed / self.successful


def attack_counts(events: Iterable[HoneypotEvent]) -> AttackCounts:
    """Tally connects / successful logins / failed logins. The counts are
    independent: a connect may carry 0..n login attempts."""
    counts = AttackCounts()
    for event in events:
        if event.kind is EventKind.SESSION_CONNECT:
            counts.total += 1
        elif event.kind is EventKind.LOGIN_SUCCESS:
            counts.successful += 1
        elif event.kind is EventKind.LOGIN_FAILED:
            counts.failed += 1
    return counts


@dataclass
class EngagementStats:
    durations: list[float]
    open_sessions: int
    mean: Optional[float] = None
    median: Optional[float] = None
    q1: Optional[float] = None
    q3: Optional[float] = None
    fence: Optional[float] = None
    filtered_mean: Optional[float] = None
    filtered_count: int = 0

    @property
    def has_data(self) -> bool:
        return bool(self.durations)


def engagement_stats(sessions: Iterable[Session], iqr: IqrFilter = IqrFilter()) -> EngagementStats:
    """Duration statistics over closed sessions; open ones are excluded
    and counted. Empty input marks the section "no data"."""
    durations = []
    open_sessions = 0
    for session in sessions:
        if session.duration is None:
            open_sessions += 1
        else:
            durations.append(float(session.duration))
    stats = EngagementStats(durations=durations, open_sessions=open_sessions)
    if not durations:
        return stats
    data = np.asarray(durations, dtype=np.float64)
    stats.mean = float(np.mean(data))
    stats.median = float(np.median(data))
    stats.q1 = float(np.percentile(data, 25))
    stats.q3 = float(np.percentile(data, 75))
    stats.fence = stats.q3 + iqr.k * (stats.q3 - stats.q1)
    kept = data[data <= stats.fence]
    stats.filtered_count = int(kept.size)
    stats.filtered_mean = float(np.mean(kept)) if kept.size else None
    return stats


@dataclass
class DelayStats:
    delays: list[float]
    median: Optional[float] = None
    mean: Optional[float] = None
    p95: Optional[float] = None

    @property
    def has_data(self) -> bool:
        return bool(self.delays)


def _delay_stats(delays: list[float]) -> DelayStats:
    stats = DelayStats(delays=delays)
    if delays:
        data = np.asarray(delays, dtype=np.float64)
        stats.median = float(np.median(data))
        stats.mean = float(np.mean(data))
        stats.p95 = float(np.percentile(data, 95))
    return stats


@dataclass
class DefenseStats:
    block: DelayStats
    end_to_end: DelayStats
    completed: int = 0
    incomplete: int = 0

    @property
    def mttb(self) -> Optional[float]:
        return self.block.mean


def defense_stats(actions: Iterable[BlockAction]) -> DefenseStats:
    """Block-delay statistics over actions with a success timestamp;
    actions without one are counted as incomplete."""
    block_delays: list[float] = []
    end_delays: list[float] = []
    incomplete = 0
    for action in actions:
        if action.success_at is None:
            incomplete += 1
            continue
        block_delays.append(action.orchestration_delay)
        end_delays.append(action.end_to_end_delay)
    return DefenseStats(
        block=_delay_stats(block_delays),
        end_to_end=_delay_stats(end_delays),
        completed=len(block_delays),
        incomplete=incomplete,
    )


@dataclass
class DailyRow:
    day: date
    total: int = 0
    successful: int = 0
    failed: int = 0
    excluded: bool = False


def daily_histogram(
    events: Iterable[HoneypotEvent],
    window: Optional[tuple[datetime, datetime]] = None,
    excluded_dates: Iterable[date] = (),
) -> list[DailyRow]:
    """Per-UTC-day counts. Days inside the window with zero events still
    render (as zero rows); explicitly excluded dates are marked."""
    rows: dict[date, DailyRow] = {}
    lo: Optional[date] = None
    hi: Optional[date] = None
    for event in events:
        day = event.timestamp.astimezone(timezone.utc).date()
        row = rows.setdefault(day, DailyRow(day=day))
        if event.kind is EventKind.SESSION_CONNECT:
            row.total += 1
        elif event.kind is EventKind.LOGIN_SUCCESS:
            row.successful += 1
        elif event.kind is EventKind.LOGIN_FAILED:
            row.failed += 1
        lo = day if lo is None or day < lo else lo
        hi = day if hi is None or day > hi else hi
    if window is not None:
        window_lo = window[0].astimezone(timezone.utc).date()
        # window is half-open; the end instant's date is included only if
        # any time of that day falls inside
        window_hi = (window[1] - timedelta(microseconds=1)).astimezone(timezone.utc).date()
        lo = window_lo if lo is None else min(lo, window_lo)
        hi = window_hi if hi is None else max(hi, window_hi)
    if lo is None:
        return []
    day = lo
    while day <= hi:
        rows.setdefault(day, DailyRow(day=day))
        day += timedelta(days=1)
    excluded = set(excluded_dates)
    for row in rows.values():
        row.excluded = row.day in excluded
    return [rows[d] for d in sorted(rows)]


def top_sources(events: Iterable[HoneypotEvent], n: int = 10) -> list[tuple[str, int]]:
    counter = Counter(e.src_ip for e in events)
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def recidivism(events: Iterable[HoneypotEvent]) -> list[tuple[str, int]]:
    counter = Counter(e.src_ip for e in events if e.kind is EventKind.BLOCKED_ATTEMPT)
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass
class MetricsReport:
    window: tuple[Optional[datetime], Optional[datetime]]
    counts: AttackCounts
    engagement: EngagementStats
    defense: DefenseStats
    daily: list[DailyRow]
    top_sources: list[tuple[str, int]]
    recidivism: list[tuple[str, int]]
    tactics: TacticSummary
    event_techniques: list[tuple[str, str, int]] = field(default_factory=list)


def build_report(
    events: list[HoneypotEvent],
    sessions: list[Session],
    actions: list[BlockAction],
    incidents: Optional[list] = None,
    window: Optional[tuple[datetime, datetime]] = None,
    excluded_dates: Iterable[date] = (),
    iqr: IqrFilter = IqrFilter(),
    classifier=None,
) -> MetricsReport:
    """Assemble the full report from raw inputs.

    The tactic table comes from detection incidents (when given); the
    event-level technique counts always come straight from the events so
    both views are visible — the two are deliberately not reconciled.
    """
    from .mitre import map_event

    technique_counter: Counter = Counter()
    for event in events:
        for tag in map_event(event, classifier):
            technique_counter[(tag.technique_id, tag.technique_name)] += 1
    return MetricsReport(
        window=window or (None, None),
        counts=attack_counts(events),
        engagement=engagement_stats(sessions, iqr),
        defense=defense_stats(actions),
        daily=daily_histogram(events, window=window, excluded_dates=excluded_dates),
        top_sources=top_sources(events),
        recidivism=recidivism(events),
        tactics=tactic_summary(incidents or []),
        event_techniques=sorted(
            ((tid, name, n) for (tid, name), n in technique_counter.items()),
            key=lambda row: (-row[2], row[0]),
        ),
    )


# -- rendering -------------------------------------------------------------------


def _fmt_seconds(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def _fmt_ratio(counts: AttackCounts) -> str:
    return "n/a" if counts.ratio is None else f"{counts.ratio:.1f}:1"


def _window_label(report: MetricsReport) -> str:
    lo, hi = report.window
    left = format_timestamp(lo) if lo else "-"
    right = format_timestamp(hi) if hi else "-"
    return f"{left} .. {right}"


def render_summary_markdown(report: MetricsReport) -> str:
    counts = report.counts
    engagement = report.engagement
    defense = report.defense
    lines = [
        "# decoyloop report",
        "",
        f"Window: {_window_label(report)}",
        "",
        "## Attack metrics",
        "",
        f"- Total attacks detected: {counts.total}",
        f"- Successful logins: {counts.successful}",
        f"- Failed logins: {counts.failed}",
        f"- Failure-to-success ratio: {_fmt_ratio(counts)}",
        "",
        "## Engagement",
        "",
    ]
    if engagement.has_data:
        lines += [
            f"- Sessions with duration: {len(engagement.durations)} (open/excluded: {engagement.open_sessions})",
            f"- Mean engagement: {_fmt_seconds(engagement.mean)} s",
            f"- Median engagement: {_fmt_seconds(engagement.median)} s",
            f"- IQR upper fence: {_fmt_seconds(engagement.fence)} s",
            f"- Mean after IQR filter: {_fmt_seconds(engagement.filtered_mean)} s"
            f" ({engagement.filtered_count} kept)",
        ]
    else:
        lines.append("- no data")
    lines += ["", "## Defense metrics", ""]
    if defense.block.has_data:
        lines += [
            f"- Completed block actions: {defense.completed} (incomplete: {defense.incomplete})",
            f"- Block delay: median {_fmt_seconds(defense.block.median)} s,"
            f" p95 {_fmt_seconds(defense.block.p95)} s",
            f"- MTTB: {_fmt_seconds(defense.mttb)} s",
            f"- End-to-end delay: median {_fmt_seconds(defense.end_to_end.median)} s,"
            f" mean {_fmt_seconds(defense.end_to_end.mean)} s",
        ]
    else:
        lines.append("- no data")
    lines += ["", "## Tactic summary", ""]
    if report.tactics.tactic_counts:
        lines += [f"- {tactic.value}: {count}" for tactic, count in report.tactics.tactic_counts]
    else:
        lines.append("- no incidents")
    lines += ["", "## Top attacker sources", ""]
    if report.top_sources:
        lines += [f"- {ip}: {count}" for ip, count in report.top_sources]
    else:
        lines.append("- none")
    if report.recidivism:
        lines += ["", "## Post-block connection attempts", ""]
        lines += [f"- {ip}: {count}" for ip, count in report.recidivism]
    return "\n".join(lines) + "\n"


def render_summary_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerow(["total_attacks", report.counts.total])
    writer.writerow(["successful_logins", report.counts.successful])
    writer.writerow(["failed_logins", report.counts.failed])
    writer.writerow(["failure_to_success_ratio", _fmt_ratio(report.counts)])
    engagement = report.engagement
    writer.writerow(["engagement_mean_s", _fmt_seconds(engagement.mean)])
    writer.writerow(["engagement_median_s", _fmt_seconds(engagement.median)])
    writer.writerow(["engagement_fence_s", _fmt_seconds(engagement.fence)])
    writer.writerow(["engagement_filtered_mean_s", _fmt_seconds(engagement.filtered_mean)])
    defense = report.defense
    writer.writerow(["block_delay_median_s", _fmt_seconds(defense.block.median)])
    writer.writerow(["block_delay_p95_s", _fmt_seconds(defense.block.p95)])
    writer.writerow(["mttb_s", _fmt_seconds(defense.mttb)])
    writer.writerow(["end_to_end_median_s", _fmt_seconds(defense.end_to_end.median)])
    writer.writerow(["end_to_end_mean_s", _fmt_seconds(defense.end_to_end.mean)])
    return out.getvalue()


def render_summary_json(report: MetricsReport) -> str:
    payload = {
        "window": [x and format_timestamp(x) for x in report.window],
        "attack": {
            "total": report.counts.total,
            "successful": report.counts.successful,
            "failed": report.counts.failed,
            "failure_to_success_ratio": _fmt_ratio(report.counts),
        },
        "engagement": {
            "sessions": len(report.engagement.durations),
            "open_sessions": report.engagement.open_sessions,
            "mean_s": _fmt_seconds(report.engagement.mean),
            "median_s": _fmt_seconds(report.engagement.median),
            "q1_s": _fmt_seconds(report.engagement.q1),
            "q3_s": _fmt_seconds(report.engagement.q3),
            "fence_s": _fmt_seconds(report.engagement.fence),
            "filtered_mean_s": _fmt_seconds(report.engagement.filtered_mean),
            "filtered_count": report.engagement.filtered_count,
        },
        "defense": {
            "completed": report.defense.completed,
            "incomplete": report.defense.incomplete,
            "block_delay_median_s": _fmt_seconds(report.defense.block.median),
            "block_delay_p95_s": _fmt_seconds(report.defense.block.p95),
            "mttb_s": _fmt_seconds(report.defense.mttb),
            "end_to_end_median_s": _fmt_seconds(report.defense.end_to_end.median),
            "end_to_end_mean_s": _fmt_seconds(report.defense.end_to_end.mean),
        },
        "tactics": [[t.value, n] for t, n in report.tactics.tactic_counts],
        "techniques": [[tid, name, n] for tid, name, n in report.tactics.technique_counts],
        "event_techniques": [[tid, name, n] for tid, name, n in report.event_techniques],
        "top_sources": [[ip, n] for ip, n in report.top_sources],
        "recidivism": [[ip, n] for ip, n in report.recidivism],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def render_daily_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["date", "total", "successful", "failed", "excluded"])
    for row in report.daily:
        writer.writerow([row.day.isoformat(), row.total, row.successful, row.failed,
                         "yes" if row.excluded else ""])
    return out.getvalue()


def render_engagement_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["duration_s"])
    for value in report.engagement.durations:
        writer.writerow([f"{value:.6f}"])
    return out.getvalue()


def render_block_delay_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["block_delay_s", "end_to_end_s"])
    for block, end in zip(report.defense.block.delays, report.defense.end_to_end.delays):
        writer.writerow([f"{block:.6f}", f"{end:.6f}"])
    return out.getvalue()


def render_top_sources_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["src_ip", "events"])
    for ip, count in report.top_sources:
        writer.writerow([ip, count])
    return out.getvalue()


def render_report(report: MetricsReport, fmt: str, out_dir: str) -> dict[str, Path]:
    """Write the report files for one format into out_dir; returns the
    written paths keyed by logical name. Series CSVs are written for
    every format so any plotting tool can consume them."""
    if fmt not in REPORT_FORMATS:
        raise UnknownFormat(fmt)
    from .mitre import summary_tactics_csv, summary_techniques_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}

    if fmt == "markdown":
        files["summary"] = out / "summary.md"
        files["summary"].write_text(render_summary_markdown(report), encoding="utf-8")
    elif fmt == "json":
        files["summary"] = out / "summary.json"
        files["summary"].write_text(render_summary_json(report), encoding="utf-8")
    else:
        files["summary"] = out / "summary.csv"
        files["summary"].write_text(render_summary_csv(report), encoding="utf-8")

    series = {
        "daily": ("daily.csv", render_daily_csv(report)),
        "engagement": ("engagement.csv", render_engagement_csv(report)),
        "block_delay": ("block_delay.csv", render_block_delay_csv(report)),
        "tactics": ("tactics.csv", summary_tactics_csv(report.tactics)),
        "techniques": ("techniques.csv", summary_techniques_csv(report.tactics)),
        "top_sources": ("top_sources.csv", render_top_sources_csv(report)),
    }
    for key, (name, content) in series.items():
        files[key] = out / name
        files[key].write_text(content, encoding="utf-8")
    return files
