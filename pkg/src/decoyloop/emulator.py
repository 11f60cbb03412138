"""Deterministic attacker traffic: synthetic Cowrie logs or live SSH runs.

A campaign is a seeded sequence of phases (brute force, recon probes,
interactive shell work). Synthetic mode writes a log whose per-kind
event counts equal the profile's computed ground truth exactly — that
arithmetic is what every pipeline test asserts against. Live mode drives
the same schedule through a real SSH client against a sensor; once the
pipeline blocks the campaign's source, subsequent attempts surface as
refused connections, which the campaign records (the recidivism signal).

Also houses the fixed-target benchmark dataset: a 7-day log plus a
block-action file whose aggregate numbers land on fixed headline values
(12,224 connects, 2,008 successes, 9,292 failures, trimmed mean
engagement 4.23 s, block-delay median 0.78 s with mean 0.86 s) so report
computation and rendering can be exercised against known targets. Those
counts are injected by construction; only the computation is under test.
"""

from __future__ import annotations

import importlib.resources
import json
import math
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .detect import Incident, Severity
from .events import EventKind, HoneypotEvent, serialize_event
from .mitre import (
    TAG_ACCOUNT_DISCOVERY,
    TAG_BRUTE_FORCE,
    TAG_COMMAND_INTERPRETER,
    TAG_FILE_DISCOVERY,
    TAG_SYSTEM_INFO,
    TAG_VALID_ACCOUNTS,
)
from .respond import BlockAction, Outcome
from .sshwire import ConnectionClosed, ProtocolViolation, SshClient


class EmulatorError(Exception):
    pass


class TargetUnreachable(EmulatorError):
    pass


def load_credential_fixture() -> list[tuple[str, str]]:
    """The shipped top-100 weak credential pairs."""
    text = (
        importlib.resources.files("decoyloop")
        .joinpath("data/top100_credentials.txt")
        .read_text(encoding="utf-8")
    )
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if line and ":" in line:
            user, _, password = line.partition(":")
            pairs.append((user, password))
    return pairs


@dataclass(frozen=True)
class BruteForce:
    attempts: int
    credentials: tuple[tuple[str, str], ...] = ()  # empty -> shipped fixture
    attempts_per_session: int = 0  # 0 -> all attempts in one session

    def sessions(self) -> int:
        per = self.attempts_per_session or self.attempts
        return math.ceil(self.attempts / per)


@dataclass(frozen=True)
class ReconOnly:
    banner_grabs: int


@dataclass(frozen=True)
class Interactive:
    username: str
    password: str
    commands: tuple[str, ...]
    pre_failures: int = 0


Phase = Union[BruteForce, ReconOnly, Interactive]


@dataclass(frozen=True)
class Timing:
    kind: str = "fixed"  # fixed | uniform | exponential
    delay: float = 1.0
    low: float = 0.5
    high: float = 2.0
    rate: float = 1.0

    def draw(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.delay
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high)
        if self.kind == "exponential":
            return rng.expovariate(self.rate)
        raise ValueError(f"unknown timing kind {self.kind!r}")


@dataclass
class CampaignProfile:
    name: str
    phases: list[Phase]
    mode: str = "synthetic"  # synthetic | live
    source_ips: tuple[str, ...] = ("203.0.113.7",)
    seed: int = 1
    timing: Timing = field(default_factory=Timing)
    epoch: Optional[datetime] = None  # synthetic timestamps start here
    dst_ip: str = "10.0.0.4"
    dst_port: int = 2222
    sensor_name: str = "decoyloop-1"
    parallelism: int = 1  # live mode only; >1 forfeits determinism

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a campaign needs at least one phase")
        if self.mode not in ("synthetic", "live"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def ground_truth(self) -> dict[EventKind, int]:
        """Per-kind event counts this profile must produce, a priori."""
        counts = {kind: 0 for kind in EventKind}
        for phase in self.phases:
            if isinstance(phase, BruteForce):
                sessions = phase.sessions()
                counts[EventKind.SESSION_CONNECT] += sessions
                counts[EventKind.SESSION_CLOSED] += sessions
                counts[EventKind.LOGIN_FAILED] += phase.attempts
            elif isinstance(phase, ReconOnly):
                counts[EventKind.SESSION_CONNECT] += phase.banner_grabs
                counts[EventKind.SESSION_CLOSED] += phase.banner_grabs
                counts[EventKind.CLIENT_VERSION] += phase.banner_grabs
                counts[EventKind.CLIENT_KEX] += phase.banner_grabs
            elif isinstance(phase, Interactive):
                counts[EventKind.SESSION_CONNECT] += 1
                counts[EventKind.SESSION_CLOSED] += 1
                counts[EventKind.LOGIN_FAILED] += phase.pre_failures
                counts[EventKind.LOGIN_SUCCESS] += 1
                counts[EventKind.COMMAND_INPUT] += len(phase.commands)
            else:
                raise TypeError(f"unknown phase {phase!r}")
        return {k: v for k, v in counts.items() if v}


@dataclass
class LiveSummary:
    sessions_attempted: int = 0
    sessions_completed: int = 0
    refused: int = 0
    logins_attempted: int = 0
    logins_succeeded: int = 0
    commands_run: int = 0


@dataclass
class CampaignResult:
    ground_truth: dict[EventKind, int]
    events: Optional[list[HoneypotEvent]] = None  # synthetic mode
    path: Optional[str] = None
    live: Optional[LiveSummary] = None
    truncated: bool = False


def parse_profile(data: dict) -> CampaignProfile:
    """Build a profile from its YAML/dict form."""
    phases: list[Phase] = []
    for raw in data.get("phases", []):
        kind = raw.get("kind")
        if kind == "brute_force":
            credentials = tuple((str(u), str(p)) for u, p in raw.get("credentials", []))
            phases.append(
                BruteForce(
                    attempts=int(raw["attempts"]),
                    credentials=credentials,
                    attempts_per_session=int(raw.get("attempts_per_session", 0)),
                )
            )
        elif kind == "recon":
            phases.append(ReconOnly(banner_grabs=int(raw["banner_grabs"])))
        elif kind == "interactive":
            phases.append(
                Interactive(
                    username=str(raw["username"]),
                    password=str(raw["password"]),
                    commands=tuple(str(c) for c in raw.get("commands", [])),
                    pre_failures=int(raw.get("pre_failures", 0)),
                )
            )
        else:
            raise ValueError(f"unknown phase kind {kind!r}")
    timing_raw = data.get("timing", {})
    timing = Timing(
        kind=str(timing_raw.get("kind", "fixed")),
        delay=float(timing_raw.get("delay", 1.0)),
        low=float(timing_raw.get("low", 0.5)),
        high=float(timing_raw.get("high", 2.0)),
        rate=float(timing_raw.get("rate", 1.0)),
    )
    epoch = None
    if data.get("epoch"):
        from .events import parse_timestamp

        epoch = parse_timestamp(str(data["epoch"]))
    return CampaignProfile(
        name=str(data.get("name", "campaign")),
        phases=phases,
        mode=str(data.get("mode", "synthetic")),
        source_ips=tuple(str(ip) for ip in data.get("source_ips", ("203.0.113.7",))),
        seed=int(data.get("seed", 1)),
        timing=timing,
        epoch=epoch,
        dst_ip=str(data.get("dst_ip", "10.0.0.4")),
        dst_port=int(data.get("dst_port", 2222)),
        parallelism=int(data.get("parallelism", 1)),
    )


# -- synthetic mode ---------------------------------------------------------------


class _SyntheticSession:
    """Accumulates one session's events with consistent timestamps."""

    def __init__(self, profile: CampaignProfile, rng: random.Random, start: datetime):
        self.profile = profile
        self.rng = rng
        self.start = start
        self.session_id = f"{rng.getrandbits(48):012x}"
        self.src_ip = rng.choice(profile.source_ips)
        self.src_port = rng.randrange(1024, 65535)
        self.cursor = start
        self.events: list[HoneypotEvent] = [self._event(EventKind.SESSION_CONNECT, start)]

    def _event(self, kind: EventKind, at: datetime, **payload) -> HoneypotEvent:
        return HoneypotEvent(
            kind=kind,
            timestamp=at,
            session=self.session_id,
            src_ip=self.src_ip,
            src_port=self.src_port,
            dst_ip=self.profile.dst_ip,
            dst_port=self.profile.dst_port,
            sensor=self.profile.sensor_name,
            **payload,
        )

    def advance(self) -> datetime:
        self.cursor += timedelta(seconds=self.profile.timing.draw(self.rng))
        return self.cursor

    def add(self, kind: EventKind, **payload):
        self.events.append(self._event(kind, self.advance(), **payload))

    def close(self) -> list[HoneypotEvent]:
        closed_at = self.cursor + timedelta(seconds=self.profile.timing.draw(self.rng))
        duration = (closed_at - self.start).total_seconds()
        self.events.append(
            self._event(EventKind.SESSION_CLOSED, closed_at, duration=round(duration, 6))
        )
        return self.events


def _synthesize(profile: CampaignProfile) -> list[HoneypotEvent]:
    rng = random.Random(profile.seed)
    clock = profile.epoch or datetime.now(timezone.utc) - timedelta(hours=1)
    events: list[HoneypotEvent] = []
    credential_pool = load_credential_fixture()
    for phase in profile.phases:
        if isinstance(phase, BruteForce):
            credentials = list(phase.credentials) or credential_pool
            per_session = phase.attempts_per_session or phase.attempts
            remaining = phase.attempts
            attempt_index = 0
            while remaining > 0:
                session = _SyntheticSession(profile, rng, clock)
                for _ in range(min(per_session, remaining)):
                    username, password = credentials[attempt_index % len(credentials)]
                    session.add(EventKind.LOGIN_FAILED, username=username, password=password,
                                message=f"login attempt [{username}/{password}] failed")
                    attempt_index += 1
                    remaining -= 1
                events.extend(session.close())
                clock = session.cursor + timedelta(seconds=profile.timing.draw(rng))
        elif isinstance(phase, ReconOnly):
            for _ in range(phase.banner_grabs):
                session = _SyntheticSession(profile, rng, clock)
                version = rng.choice(
                    ("SSH-2.0-libssh2_1.10.0", "SSH-2.0-Go", "SSH-2.0-paramiko_2.11.0", "SSH-2.0-Nmap-SSH2")
                )
                session.add(EventKind.CLIENT_VERSION, version=version,
                            message=f"Remote SSH version: {version}")
                session.add(EventKind.CLIENT_KEX,
                            kex_fingerprint=f"{rng.getrandbits(128):032x}",
                            message="SSH client kex fingerprint")
                events.extend(session.close())
                clock = session.cursor + timedelta(seconds=profile.timing.draw(rng))
        elif isinstance(phase, Interactive):
            session = _SyntheticSession(profile, rng, clock)
            credentials = credential_pool
            for k in range(phase.pre_failures):
                username, password = credentials[k % len(credentials)]
                session.add(EventKind.LOGIN_FAILED, username=username, password=password,
                            message=f"login attempt [{username}/{password}] failed")
            session.add(EventKind.LOGIN_SUCCESS, username=phase.username, password=phase.password,
                        message=f"login attempt [{phase.username}/{phase.password}] succeeded")
            for command in phase.commands:
                session.add(EventKind.COMMAND_INPUT, input=command, message=f"CMD: {command}")
            events.extend(session.close())
            clock = session.cursor + timedelta(seconds=profile.timing.draw(rng))
    return events


# -- live mode --------------------------------------------------------------------


def _live_connect(profile: CampaignProfile, host: str, port: int, src_ip: Optional[str]):
    source = (src_ip, 0) if src_ip and src_ip.startswith("127.") else None
    return SshClient.connect(host, port, timeout=10.0, source_address=source)


def _live_session_units(profile: CampaignProfile, summary: LiveSummary, lock: threading.Lock):
    """Expand phases into per-session callables taking an open client."""
    credential_pool = load_credential_fixture()

    def count(attr, amount=1):
        with lock:
            setattr(summary, attr, getattr(summary, attr) + amount)

    units = []
    for phase in profile.phases:
        if isinstance(phase, BruteForce):
            credentials = list(phase.credentials) or credential_pool
            per_session = phase.attempts_per_session or phase.attempts
            remaining = phase.attempts
            index = 0
            while remaining > 0:
                batch = min(per_session, remaining)

                def brute(client, batch=batch, start=index):
                    for offset in range(batch):
                        username, password = credentials[(start + offset) % len(credentials)]
                        count("logins_attempted")
                        if client.auth_password(username, password):
                            count("logins_succeeded")
                            return

                units.append(brute)
                index += batch
                remaining -= batch
        elif isinstance(phase, ReconOnly):
            units.extend([lambda client: None] * phase.banner_grabs)
        elif isinstance(phase, Interactive):

            def interactive(client, phase=phase):
                for k in range(phase.pre_failures):
                    username, password = credential_pool[k % len(credential_pool)]
                    count("logins_attempted")
                    client.auth_password(username, password)
                count("logins_attempted")
                if not client.auth_password(phase.username, phase.password):
                    return
                count("logins_succeeded")
                for command in phase.commands:
                    client.exec_command(command)
                    count("commands_run")

            units.append(interactive)
    return units


def _run_live(profile: CampaignProfile, host: str, port: int, pause: float) -> CampaignResult:
    rng = random.Random(profile.seed)
    summary = LiveSummary()
    lock = threading.Lock()
    units = _live_session_units(profile, summary, lock)
    sources = [rng.choice(profile.source_ips) if profile.source_ips else None for _ in units]

    def run_session(work, source) -> str:
        with lock:
            summary.sessions_attempted += 1
        try:
            client = _live_connect(profile, host, port, source)
        except ConnectionRefusedError:
            return "unreachable"
        except (ConnectionClosed, ProtocolViolation, OSError):
            with lock:
                summary.refused += 1
            return "refused"
        try:
            work(client)
            with lock:
                summary.sessions_completed += 1
        except (ConnectionClosed, ProtocolViolation, OSError):
            with lock:
                summary.refused += 1
            return "refused"
        finally:
            client.close()
        if pause:
            time.sleep(pause)
        return "completed"

    truncated = False
    if profile.parallelism <= 1:
        for work, source in zip(units, sources):
            if run_session(work, source) == "unreachable":
                if summary.sessions_completed == 0 and summary.refused == 0:
                    raise TargetUnreachable(f"{host}:{port} refused TCP connection")
                truncated = True
                break
    else:
        # concurrent identities: determinism is not guaranteed here
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=profile.parallelism) as pool:
            outcomes = list(pool.map(run_session, units, sources))
        if "unreachable" in outcomes:
            if summary.sessions_completed == 0 and summary.refused == 0:
                raise TargetUnreachable(f"{host}:{port} refused TCP connection")
            truncated = True
    return CampaignResult(ground_truth=profile.ground_truth(), live=summary, truncated=truncated)


def run_campaign(
    profile: CampaignProfile, target: str, live_pause: float = 0.0
) -> CampaignResult:
    """Execute a campaign.

    target: ``out:<path>`` writes a synthetic log; ``tcp:<host>:<port>``
    drives live SSH sessions.
    """
    if target.startswith("out:"):
        path = Path(target[4:])
        events = _synthesize(profile)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fh:
                for event in events:
                    fh.write(serialize_event(event) + "\n")
        except OSError as exc:
            raise TargetUnreachable(str(exc)) from None
        return CampaignResult(ground_truth=profile.ground_truth(), events=events, path=str(path))
    if target.startswith("tcp:"):
        host, _, port = target[4:].rpartition(":")
        if not host:
            raise ValueError(f"live target needs tcp:host:port, got {target!r}")
        return _run_live(profile, host, int(port), pause=live_pause)
    raise ValueError(f"unknown target {target!r} (expected out:<path> or tcp:<host>:<port>)")


# -- benchmark dataset ---------------------------------------------------------------

BENCHMARK_DAYS = (
    date(2025, 5, 15),
    date(2025, 5, 16),
    date(2025, 5, 17),
    date(2025, 5, 18),
    date(2025, 5, 19),
    date(2025, 5, 22),
    date(2025, 5, 23),
)
BENCHMARK_EXCLUDED_DAYS = (date(2025, 5, 20), date(2025, 5, 21))
BENCHMARK_TOTALS = {"connects": 12224, "successes": 2008, "failures": 9292}
TARGET_TRIMMED_MEAN = 4.23  # engagement mean after the IQR trim
TARGET_MEDIAN = 3.6
TARGET_BLOCK_MEDIAN = 0.78
TARGET_MTTB = 0.86

# peaks on May 18 and May 23
_DAY_WEIGHTS = (0.115, 0.120, 0.125, 0.205, 0.125, 0.115, 0.195)


def _apportion(total: int, weights=_DAY_WEIGHTS) -> list[int]:
    """Largest-remainder allocation so per-day integers sum exactly."""
    raw = [total * w for w in weights]
    counts = [int(x) for x in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _engagement_durations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw session durations, then pin median and trimmed mean to the
    headline targets: a full multiplicative scale fixes the median, and a
    binary-searched stretch of the above-median tail lands the
    IQR-trimmed mean."""
    bulk = rng.gamma(shape=2.2, scale=1.8, size=n)
    outliers = rng.choice(n, size=int(n * 0.02), replace=False)
    bulk[outliers] = rng.uniform(10.5, 60.0, size=outliers.size)
    bulk *= TARGET_MEDIAN / np.median(bulk)

    def trimmed_mean(stretch: float) -> float:
        data = bulk.copy()
        mask = data > TARGET_MEDIAN
        data[mask] = TARGET_MEDIAN + (data[mask] - TARGET_MEDIAN) * stretch
        q1, q3 = np.percentile(data, [25, 75])
        fence = q3 + 1.5 * (q3 - q1)
        return float(data[data <= fence].mean())

    lo, hi = 0.05, 8.0
    for _ in range(64):
        mid = (lo + hi) / 2
        if trimmed_mean(mid) < TARGET_TRIMMED_MEAN:
            lo = mid
        else:
            hi = mid
    stretch = (lo + hi) / 2
    mask = bulk > TARGET_MEDIAN
    bulk[mask] = TARGET_MEDIAN + (bulk[mask] - TARGET_MEDIAN) * stretch
    return np.maximum(bulk, 0.05)


def _block_delays(n: int = 50) -> list[float]:
    """Fifty delays with median exactly 0.78 and mean exactly 0.86:
    24 fast values, the 0.78 median pair, 23 just-above-median values,
    one 16 s straggler."""
    low = list(np.linspace(0.05, 0.41, 24))
    mid = list(np.linspace(0.785, 0.95, 23))
    delays = low + [TARGET_BLOCK_MEDIAN, TARGET_BLOCK_MEDIAN] + mid + [16.0]
    target = TARGET_MTTB * n
    delta = target - sum(delays)
    # absorb the residual into the fast bucket, keeping order and bounds
    low[0] += delta
    if not 0.0 < low[0] < TARGET_BLOCK_MEDIAN:
        raise AssertionError("block-delay construction out of bounds")
    delays = sorted(low) + [TARGET_BLOCK_MEDIAN, TARGET_BLOCK_MEDIAN] + mid + [16.0]
    assert abs(sum(delays) / n - TARGET_MTTB) < 1e-9
    return delays


@dataclass
class BenchmarkDataset:
    log_path: str
    actions_path: str
    expected: dict


def _ip_pool(rng: np.random.Generator, size: int = 240) -> list[str]:
    pool = []
    while len(pool) < size:
        a = int(rng.integers(1, 224))
        if a in (10, 127, 172, 192):
            continue
        candidate = f"{a}.{int(rng.integers(0, 256))}.{int(rng.integers(0, 256))}.{int(rng.integers(1, 255))}"
        if candidate not in pool:
            pool.append(candidate)
    return pool


def benchmark_dataset(out_dir: str, seed: int = 20250515) -> BenchmarkDataset:
    """Generate the 7-day synthetic log + action file with the headline
    aggregate values. Clearly synthetic: per-day numbers are
    generator-chosen; only the aggregates are pinned."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "benchmark_events.jsonl"
    actions_path = out / "benchmark_actions.jsonl"

    connects = _apportion(BENCHMARK_TOTALS["connects"])
    successes = _apportion(BENCHMARK_TOTALS["successes"])
    failures = _apportion(BENCHMARK_TOTALS["failures"])
    durations = _engagement_durations(rng, BENCHMARK_TOTALS["connects"])
    pool = _ip_pool(rng)
    # zipf-ish weights give a stable top-10
    weights = np.array([1.0 / (i + 1) ** 0.8 for i in range(len(pool))])
    weights /= weights.sum()

    credentials = load_credential_fixture()
    events: list[HoneypotEvent] = []
    cursor = 0
    for day_index, day in enumerate(BENCHMARK_DAYS):
        day_start = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
        n_day = connects[day_index]
        day_durations = durations[cursor : cursor + n_day]
        # connect instants leave room for the session to finish in-day
        margin = np.ceil(day_durations).astype(int) + 1
        seconds = rng.integers(0, 86400 - margin)
        order = np.argsort(seconds, kind="stable")
        seconds = seconds[order]
        day_durations = day_durations[order]
        sessions = []
        for k in range(n_day):
            start = day_start + timedelta(seconds=int(seconds[k]), microseconds=int(rng.integers(0, 1_000_000)))
            session_id = f"{rng.integers(0, 2**48):012x}"
            src_ip = pool[int(rng.choice(len(pool), p=weights))]
            src_port = int(rng.integers(1024, 65535))
            duration = float(day_durations[k])
            sessions.append((start, session_id, src_ip, src_port, duration, []))
        # round-robin login assignment within the day
        for index in range(successes[day_index]):
            sessions[index % n_day][5].append(True)
        for index in range(failures[day_index]):
            sessions[(index * 7) % n_day][5].append(False)
        for start, session_id, src_ip, src_port, duration, logins in sessions:
            common = dict(
                session=session_id, src_ip=src_ip, src_port=src_port,
                dst_ip="10.0.0.4", dst_port=2222, sensor="decoyloop-1",
            )
            events.append(HoneypotEvent(kind=EventKind.SESSION_CONNECT, timestamp=start, **common))
            for j, success in enumerate(logins):
                at = start + timedelta(seconds=duration * (j + 1) / (len(logins) + 2))
                kind = EventKind.LOGIN_SUCCESS if success else EventKind.LOGIN_FAILED
                username, password = credentials[(cursor + j) % len(credentials)]
                events.append(
                    HoneypotEvent(kind=kind, timestamp=at, username=username, password=password, **common)
                )
            events.append(
                HoneypotEvent(
                    kind=EventKind.SESSION_CLOSED,
                    timestamp=start + timedelta(seconds=duration),
                    duration=round(duration, 6),
                    **common,
                )
            )
        cursor += n_day

    events.sort(key=lambda e: e.timestamp)
    with open(log_path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(serialize_event(event) + "\n")

    delays = _block_delays()
    action_days = [BENCHMARK_DAYS[int(i) % len(BENCHMARK_DAYS)] for i in range(len(delays))]
    with open(actions_path, "w", encoding="utf-8") as fh:
        for index, (delay, day) in enumerate(zip(delays, action_days)):
            start = datetime(day.year, day.month, day.day, tzinfo=timezone.utc) + timedelta(
                seconds=int(rng.integers(3600, 82800))
            )
            lag = float(rng.uniform(0.2, 0.9))
            action = BlockAction(
                incident_id=index + 1,
                ip=pool[index % len(pool)],
                start_at=start,
                trigger_event_at=start - timedelta(seconds=lag),
                success_at=start + timedelta(seconds=delay),
                outcome=Outcome.APPLIED,
                attempts=1,
                rule_name=f"deny-{index + 1}",
            )
            fh.write(json.dumps(action.to_dict()) + "\n")

    return BenchmarkDataset(
        log_path=str(log_path),
        actions_path=str(actions_path),
        expected={
            "total": BENCHMARK_TOTALS["connects"],
            "successful": BENCHMARK_TOTALS["successes"],
            "failed": BENCHMARK_TOTALS["failures"],
            "ratio": "4.6:1",
            "engagement_filtered_mean": TARGET_TRIMMED_MEAN,
            "engagement_median": TARGET_MEDIAN,
            "block_median": TARGET_BLOCK_MEDIAN,
            "mttb": TARGET_MTTB,
        },
    )


# Tactic-level incident counts used by the rendering test: the numbers are
# injected by construction; only summarization and rendering are under test.
BENCHMARK_TACTIC_COUNTS = {
    "Initial Access": 414,
    "Credential Access": 31,
    "Execution": 68,
    "Discovery": 451,
}


def benchmark_tactic_incidents() -> list[Incident]:
    """Canned incident list whose tactic counts equal BENCHMARK_TACTIC_COUNTS."""
    base = datetime(2025, 5, 15, tzinfo=timezone.utc)
    template = HoneypotEvent(
        kind=EventKind.SESSION_CONNECT,
        timestamp=base,
        session="feedc0de1234",
        src_ip="203.0.113.77",
        src_port=40000,
        dst_ip="10.0.0.4",
        dst_port=2222,
        sensor="decoyloop-1",
    )
    plan = [
        ("Initial Access", [TAG_VALID_ACCOUNTS], "SuccessfulLogin", Severity.CRITICAL),
        ("Credential Access", [TAG_BRUTE_FORCE], "BruteForce", Severity.HIGH),
        ("Execution", [TAG_COMMAND_INTERPRETER], "CommandExecution", Severity.HIGH),
        ("Discovery", [TAG_SYSTEM_INFO, TAG_FILE_DISCOVERY, TAG_ACCOUNT_DISCOVERY], "CommandExecution", Severity.HIGH),
    ]
    incidents = []
    next_id = 1
    for tactic_name, tags, rule, severity in plan:
        for index in range(BENCHMARK_TACTIC_COUNTS[tactic_name]):
            at = base + timedelta(seconds=next_id)
            incidents.append(
                Incident(
                    id=next_id,
                    rule_name=rule,
                    severity=severity,
                    entity_ip=f"203.0.113.{(next_id % 200) + 1}",
                    first_event_at=at,
                    last_event_at=at,
                    created_at=at,
                    matched_events=[template],
                    command_history=[],
                    mitre_tags=[tags[index % len(tags)]],
                )
            )
            next_id += 1
    return incidents


def write_incidents(incidents: list[Incident], path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for incident in incidents:
            fh.write(json.dumps(incident.to_dict()) + "\n")
