"""Append-only, time-window-queryable event store plus ingestion paths.

Storage is the wire format itself: newline-JSON segment files under
``<root>/segments/`` rotated at 64 MiB, with a ``manifest.json`` listing
segments and counts. The in-memory index (60 s time buckets, source IP,
kind) is rebuilt by a full scan on open — desk-scale volumes make
anything fancier unnecessary and keep every fixture greppable.

Crash contract: re-opening after a kill loses at most the final partial
line. Live consumers attach with :meth:`EventStore.subscribe`; a consumer
that falls more than its buffer behind is dropped with an audit record,
never silently.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional, Union

from .events import EventError, EventKind, HoneypotEvent, UnknownEventId, parse_event, serialize_event

logger = logging.getLogger(__name__)

SEGMENT_ROTATE_BYTES = 64 * 1024 * 1024
TIME_BUCKET_SECONDS = 60
MAX_FUTURE_SKEW_SECONDS = 300.0


class StoreError(Exception):
    pass


class SourceUnavailable(StoreError):
    """Ingest source cannot be opened/reached."""


class SubscriberLagOverflow(StoreError):
    """Raised to a consumer that was dropped for falling too far behind."""


class Subscription:
    """One live consumer of appended events (exactly-once, append order)."""

    def __init__(self, buffer: int):
        self._queue: queue.Queue = queue.Queue(maxsize=buffer)
        self.dropped = False

    def get(self, timeout: float = 0.0) -> Optional[HoneypotEvent]:
        """Next event, or None when nothing arrives within timeout. Raises
        SubscriberLagOverflow once the backlog is drained after this
        consumer was dropped."""
        try:
            if timeout > 0:
                return self._queue.get(timeout=timeout)
            return self._queue.get_nowait()
        except queue.Empty:
            if self.dropped:
                raise SubscriberLagOverflow("subscriber dropped after lag overflow") from None
            return None

    def _offer(self, event: HoneypotEvent) -> bool:
        try:
            self._queue.put_nowait(event)
            return True
        except queue.Full:
            self.dropped = True
            return False


class EventStore:
    """Append-only event log with window queries and live subscriptions."""

    def __init__(self, root: Union[str, Path], rotate_bytes: int = SEGMENT_ROTATE_BYTES):
        self.root = Path(root)
        self.segments_dir = self.root / "segments"
        self.segments_dir.mkdir(parents=True, exist_ok=True)
        self.rotate_bytes = rotate_bytes
        self.recovered_partial = 0
        self.audit: list[dict] = []
        self._lock = threading.RLock()
        self._events: list[HoneypotEvent] = []
        self._by_bucket: dict[int, list[int]] = {}
        self._by_kind: dict[EventKind, list[int]] = {}
        self._by_ip: dict[str, list[int]] = {}
        self._subscribers: list[Subscription] = []
        self._segment_names: list[str] = []
        self._segment_counts: dict[str, int] = {}
        self._fh = None
        self._scan_segments()
        self._open_current_segment()
        self.write_manifest()

    # -- lifecycle -----------------------------------------------------------

    def _scan_segments(self):
        names = sorted(p.name for p in self.segments_dir.glob("*.jsonl"))
        for name in names:
            raw = (self.segments_dir / name).read_bytes()
            count = 0
            for line_no, line in enumerate(raw.split(b"\n")):
                if not line.strip():
                    continue
                try:
                    event = parse_event(line.decode("utf-8"))
                except (EventError, UnicodeDecodeError) as exc:
                    # expected only for a partial final line after a crash
                    self.recovered_partial += 1
                    logger.warning("dropping unreadable line %d in %s: %s", line_no, name, exc)
                    continue
                self._index_event(event)
                count += 1
            self._segment_names.append(name)
            self._segment_counts[name] = count

    def _open_current_segment(self):
        if not self._segment_names:
            self._segment_names.append("0000.jsonl")
            self._segment_counts["0000.jsonl"] = 0
        current = self.segments_dir / self._segment_names[-1]
        self._fh = open(current, "ab")

    def _rotate_if_needed(self):
        if self._fh.tell() < self.rotate_bytes:
            return
        self._fh.close()
        name = f"{len(self._segment_names):04d}.jsonl"
        self._segment_names.append(name)
        self._segment_counts[name] = 0
        self._fh = open(self.segments_dir / name, "ab")
        self.write_manifest()

    def close(self):
        with self._lock:
            if self._fh:
                self._fh.close()
                self._fh = None
            self.write_manifest()

    def write_manifest(self):
        manifest = {
            "segments": [
                {"name": name, "events": self._segment_counts.get(name, 0)}
                for name in self._segment_names
            ],
            "total_events": len(self._events),
        }
        tmp = self.root / "manifest.json.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        os.replace(tmp, self.root / "manifest.json")

    # -- writes ----------------------------------------------------------------

    def _index_event(self, event: HoneypotEvent):
        position = len(self._events)
        self._events.append(event)
        bucket = int(event.timestamp.timestamp()) // TIME_BUCKET_SECONDS
        self._by_bucket.setdefault(bucket, []).append(position)
        self._by_kind.setdefault(event.kind, []).append(position)
        self._by_ip.setdefault(event.src_ip, []).append(position)

    def append(self, event: HoneypotEvent):
        """Durably append one event and fan out to live subscribers."""
        line = serialize_event(event).encode("utf-8") + b"\n"
        with self._lock:
            if self._fh is None:
                raise StoreError("store is closed")
            self._rotate_if_needed()
            self._fh.write(line)
            self._fh.flush()
            self._segment_counts[self._segment_names[-1]] += 1
            self._index_event(event)
            lagging = [s for s in self._subscribers if not s._offer(event)]
            for sub in lagging:
                self._subscribers.remove(sub)
                self.audit.append(
                    {
                        "kind": "subscriber_lag_overflow",
                        "at": datetime.now(timezone.utc).isoformat(),
                        "pending": len(self._events),
                    }
                )
                logger.warning("dropped lagging subscriber")

    # -- reads -----------------------------------------------------------------

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    def all_events(self) -> list[HoneypotEvent]:
        with self._lock:
            return list(self._events)

    def query(
        self,
        t0: Optional[datetime] = None,
        t1: Optional[datetime] = None,
        kinds: Optional[Iterable[EventKind]] = None,
        src_ips: Optional[Iterable[str]] = None,
    ) -> list[HoneypotEvent]:
        """Events with t0 <= timestamp < t1 matching every given filter,
        timestamp-ordered (stable on append order for ties)."""
        if t0 is not None and t1 is not None and t0 > t1:
            raise ValueError("t0 must be <= t1")
        kind_set = frozenset(kinds) if kinds is not None else None
        ip_set = frozenset(src_ips) if src_ips is not None else None
        with self._lock:
            positions = self._candidate_positions(t0, t1)
            selected = []
            for position in positions:
                event = self._events[position]
                if t0 is not None and event.timestamp < t0:
                    continue
                if t1 is not None and event.timestamp >= t1:
                    continue
                if kind_set is not None and event.kind not in kind_set:
                    continue
                if ip_set is not None and event.src_ip not in ip_set:
                    continue
                selected.append((event.timestamp, position))
        selected.sort()
        with self._lock:
            return [self._events[position] for _, position in selected]

    def _candidate_positions(self, t0, t1) -> Iterable[int]:
        if t0 is None or t1 is None:
            return range(len(self._events))
        first = int(t0.timestamp()) // TIME_BUCKET_SECONDS
        last = int(t1.timestamp()) // TIME_BUCKET_SECONDS
        if last - first > len(self._by_bucket):  # sparse window: walk buckets
            positions: list[int] = []
            for bucket, bucket_positions in self._by_bucket.items():
                if first <= bucket <= last:
                    positions.extend(bucket_positions)
            return positions
        positions = []
        for bucket in range(first, last + 1):
            positions.extend(self._by_bucket.get(bucket, ()))
        return positions

    def subscribe(self, buffer: int = 1024) -> Subscription:
        """Attach a live consumer; only events appended afterwards flow."""
        subscription = Subscription(buffer)
        with self._lock:
            self._subscribers.append(subscription)
        return subscription


# -- ingestion ------------------------------------------------------------------


@dataclass
class FileTail:
    path: str
    follow: bool = False


@dataclass
class SocketListener:
    host: str
    port: int


@dataclass
class Replay:
    path: str
    speed: Union[float, str] = "instant"  # multiplier, or "instant"

    def __post_init__(self):
        if self.speed != "instant" and not (isinstance(self.speed, (int, float)) and self.speed > 0):
            raise ValueError(f"replay speed must be > 0 or 'instant', got {self.speed!r}")


IngestSource = Union[FileTail, SocketListener, Replay]


@dataclass
class IngestSummary:
    accepted: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)


def parse_source(spec: str) -> IngestSource:
    """Parse a CLI source spec: file:<path>, tcp:<host>:<port>,
    replay:<path>[:speed]."""
    scheme, _, rest = spec.partition(":")
    if scheme == "file":
        return FileTail(path=rest)
    if scheme == "tcp":
        host, _, port = rest.rpartition(":")
        if not host:
            raise ValueError(f"tcp source needs host:port, got {spec!r}")
        return SocketListener(host=host, port=int(port))
    if scheme == "replay":
        path, _, speed = rest.rpartition(":")
        if speed and not path:  # no speed given
            return Replay(path=rest)
        if speed in ("", "instant"):
            return Replay(path=path or rest)
        try:
            return Replay(path=path, speed=float(speed))
        except ValueError:
            return Replay(path=rest)
    raise ValueError(f"unknown source scheme: {spec!r}")


def _ingest_line(
    line: str,
    store: EventStore,
    summary: IngestSummary,
    lenient: bool,
    now: Optional[datetime] = None,
    max_skew: float = MAX_FUTURE_SKEW_SECONDS,
):
    line = line.strip()
    if not line:
        return
    try:
        event = parse_event(line)
    except UnknownEventId as exc:
        if lenient:
            summary.skipped += 1
            return
        raise
    except EventError as exc:
        if lenient:
            summary.skipped += 1
            summary.errors.append(str(exc))
            return
        raise
    clock_now = now or datetime.now(timezone.utc)
    if event.timestamp > clock_now + timedelta(seconds=max_skew):
        summary.skipped += 1
        summary.errors.append(f"future-skewed event rejected: {event.timestamp.isoformat()}")
        return
    store.append(event)
    summary.accepted += 1


def ingest(
    source: IngestSource,
    store: EventStore,
    lenient: bool = False,
    stop_event: Optional[threading.Event] = None,
) -> IngestSummary:
    """Drain a source into the store; returns {accepted, skipped, errors}.

    Replay with speed="instant" lands every event before returning; timed
    replay scales inter-event gaps by 1/speed. Parse errors are fatal
    unless lenient (then counted as skipped).
    """
    summary = IngestSummary()
    if isinstance(source, Replay):
        try:
            fh = open(source.path, "r", encoding="utf-8")
        except OSError as exc:
            raise SourceUnavailable(str(exc)) from None
        with fh:
            previous_ts: Optional[datetime] = None
            for line in fh:
                if stop_event is not None and stop_event.is_set():
                    break
                if source.speed != "instant" and line.strip():
                    try:
                        current_ts = parse_event(line.strip()).timestamp
                    except EventError:
                        current_ts = None
                    if current_ts is not None:
                        if previous_ts is not None:
                            gap = max(0.0, (current_ts - previous_ts).total_seconds())
                            time.sleep(gap / float(source.speed))
                        previous_ts = current_ts
                _ingest_line(line, store, summary, lenient)
        store.write_manifest()
        return summary
    if isinstance(source, FileTail):
        return _ingest_file_tail(source, store, lenient, summary, stop_event)
    if isinstance(source, SocketListener):
        return _ingest_socket(source, store, lenient, summary, stop_event)
    raise TypeError(f"unsupported source: {source!r}")


def _ingest_file_tail(source, store, lenient, summary, stop_event):
    try:
        fh = open(source.path, "r", encoding="utf-8")
    except OSError as exc:
        raise SourceUnavailable(str(exc)) from None
    with fh:
        while True:
            line = fh.readline()
            if line:
                if line.endswith("\n"):
                    _ingest_line(line, store, summary, lenient)
                else:
                    # partial final line: only consume it when not following
                    if source.follow:
                        fh.seek(fh.tell() - len(line))
                    else:
                        _ingest_line(line, store, summary, lenient)
                continue
            if not source.follow or (stop_event is not None and stop_event.is_set()):
                break
            time.sleep(0.05)
    store.write_manifest()
    return summary


def _ingest_socket(source, store, lenient, summary, stop_event):
    try:
        server = socket.create_server((source.host, source.port))
    except OSError as exc:
        raise SourceUnavailable(str(exc)) from None
    server.settimeout(0.2)
    try:
        while stop_event is None or not stop_event.is_set():
            try:
                conn, _ = server.accept()
            except socket.timeout:
                continue
            with conn:
                buffer = b""
                conn.settimeout(0.2)
                while stop_event is None or not stop_event.is_set():
                    try:
                        chunk = conn.recv(65536)
                    except socket.timeout:
                        continue
                    if not chunk:
                        break
                    buffer += chunk
                    while b"\n" in buffer:
                        line, buffer = buffer.split(b"\n", 1)
                        _ingest_line(line.decode("utf-8", "replace"), store, summary, lenient)
    finally:
        server.close()
        store.write_manifest()
    return summary
