"""Medium-interaction SSH honeypot sensor.

Accepts attacker connections, emulates authentication and a restricted
shell, and emits telemetry events for every observable step. Before any
protocol byte is exchanged the sensor consults the firewall plane: a
blocked source is refused immediately and recorded as a
BLOCKED_ATTEMPT — that refusal is what closes the loop.

Per accepted connection the event contract is: exactly one
SessionConnect (at accept time) and exactly one SessionClosed (with the
measured wall-clock duration) in that order, with ClientVersion,
ClientKex, login and command events in between as the attacker produces
them. Junk (non-SSH) bytes still produce the connect/closed pair.
"""

from __future__ import annotations

import logging
import secrets
import socket
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Optional

from .events import EventKind, HoneypotEvent, serialize_event
from .firewall import NullFirewall
from .shell import ShellEmulation, emulate_command
from .sshwire import (
    ConnectionClosed,
    ProtocolViolation,
    ServerCallbacks,
    ServerTransport,
    generate_host_key,
)

logger = logging.getLogger(__name__)

DEFAULT_BANNER = "SSH-2.0-OpenSSH_8.2p1 Ubuntu-4ubuntu0.5"

#: Weak pairs the default policy accepts, so both success and failure
#: populations exist in collected data.
DEFAULT_ACCEPT_PAIRS = (
    ("root", "123456"),
    ("root", "root"),
    ("root", "password"),
    ("root", "admin"),
    ("admin", "admin"),
    ("admin", "123456"),
    ("ubuntu", "ubuntu"),
    ("test", "test"),
    ("user", "user"),
    ("pi", "raspberry"),
)


class SessionCut(Exception):
    """Raised inside a session whose source got firewall-denied mid-flight;
    the connection is torn down like a firewall killing the flow."""


class CredentialMode(Enum):
    ACCEPT_LIST = "accept_list"
    ACCEPT_AFTER_N = "accept_after_n"
    REJECT_ALL = "reject_all"


@dataclass(frozen=True)
class CredentialPolicy:
    mode: CredentialMode = CredentialMode.ACCEPT_LIST
    accept_list: frozenset = frozenset(DEFAULT_ACCEPT_PAIRS)
    n: int = 3

    def __post_init__(self):
        if self.mode is CredentialMode.ACCEPT_AFTER_N and self.n < 1:
            raise ValueError("accept_after_n requires n >= 1")
        if self.mode is CredentialMode.ACCEPT_LIST and not self.accept_list:
            raise ValueError("accept_list requires a non-empty list")

    @classmethod
    def from_dict(cls, data: dict) -> "CredentialPolicy":
        mode = CredentialMode(str(data.get("mode", "accept_list")))
        pairs = frozenset((str(u), str(p)) for u, p in data.get("accept", DEFAULT_ACCEPT_PAIRS))
        return cls(mode=mode, accept_list=pairs, n=int(data.get("n", 3)))


def evaluate_credentials(
    username: str, password: str, attempt_index: int, policy: CredentialPolicy
) -> bool:
    """Deterministic accept/reject decision for one login attempt."""
    if attempt_index < 1:
        raise ValueError("attempt_index is 1-based")
    if policy.mode is CredentialMode.REJECT_ALL:
        return False
    if policy.mode is CredentialMode.ACCEPT_AFTER_N:
        return attempt_index >= policy.n
    return (username, password) in policy.accept_list


@dataclass
class SensorConfig:
    host: str = "0.0.0.0"
    port: int = 2222
    banner: str = DEFAULT_BANNER
    policy: CredentialPolicy = field(default_factory=CredentialPolicy)
    shell_profile: str = "ubuntu"
    max_concurrent_sessions: int = 256
    session_idle_timeout: float = 120.0
    sensor_name: str = "decoyloop-1"

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"listen port must be 1..65535, got {self.port}")
        if not self.banner.startswith("SSH-2.0-"):
            raise ValueError("banner must start with SSH-2.0-")
        if self.max_concurrent_sessions < 1:
            raise ValueError("max_concurrent_sessions must be positive")


# -- event sinks --------------------------------------------------------------------


class CollectorSink:
    """In-memory sink for tests and embedding."""

    def __init__(self):
        self.events: list[HoneypotEvent] = []
        self._lock = threading.Lock()

    def append(self, event: HoneypotEvent):
        with self._lock:
            self.events.append(event)


class StoreSink:
    def __init__(self, store):
        self.store = store

    def append(self, event: HoneypotEvent):
        self.store.append(event)


class FileSink:
    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def append(self, event: HoneypotEvent):
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(serialize_event(event) + "\n")


@dataclass
class SensorStats:
    connections: int = 0
    blocked: int = 0
    saturated: int = 0
    protocol_errors: int = 0
    sink_failures: int = 0


class _SessionCallbacks(ServerCallbacks):
    """Bridges transport hooks to telemetry events and the fake shell."""

    def __init__(self, sensor: "SensorServer", session_id: str, src: tuple, dst: tuple):
        self.sensor = sensor
        self.session_id = session_id
        self.src = src
        self.dst = dst
        # shell_profile selects the emulated host identity; only the
        # stock Ubuntu profile ships for now
        self.shell = ShellEmulation(hostname="ubuntu")
        self.logins = 0

    def _emit(self, kind: EventKind, message: str = "", **payload):
        self.sensor.emit(
            kind,
            session=self.session_id,
            src=self.src,
            dst=self.dst,
            message=message,
            **payload,
        )

    def _cut_if_blocked(self):
        # denies landing mid-session terminate the flow, so a blocked
        # source cannot keep interacting over an established connection
        if self.sensor.firewall.is_blocked(self.src[0], self.sensor.config.port):
            raise SessionCut(self.src[0])

    def on_client_version(self, version: str):
        self._emit(EventKind.CLIENT_VERSION, message=f"Remote SSH version: {version}", version=version)

    def on_kex_fingerprint(self, fingerprint: str):
        self._emit(EventKind.CLIENT_KEX, message="SSH client kex fingerprint", kex_fingerprint=fingerprint)

    def check_password(self, username: str, password: str, attempt_index: int) -> bool:
        self._cut_if_blocked()
        accepted = evaluate_credentials(username, password, attempt_index, self.sensor.config.policy)
        kind = EventKind.LOGIN_SUCCESS if accepted else EventKind.LOGIN_FAILED
        state = "succeeded" if accepted else "failed"
        self._emit(
            kind,
            message=f"login attempt [{username}/{password}] {state}",
            username=username,
            password=password,
        )
        if accepted:
            self.shell.username = username if username in ("root", "ubuntu") else "root"
            self.shell.cwd = "/root" if self.shell.username == "root" else f"/home/{self.shell.username}"
        return accepted

    def on_command(self, command: str) -> str:
        self._cut_if_blocked()
        self._emit(EventKind.COMMAND_INPUT, message=f"CMD: {command}", input=command)
        return emulate_command(command, self.shell)

    def shell_prompt(self) -> str:
        return self.shell.prompt()

    def shell_greeting(self) -> str:
        return (
            "Welcome to Ubuntu 20.04.4 LTS (GNU/Linux 5.4.0-104-generic x86_64)\n"
            "Last login: Thu May 15 06:11:09 2025 from 10.0.0.5"
        )


class SensorServer:
    """Threaded TCP listener running the SSH session state machine."""

    def __init__(
        self,
        config: SensorConfig,
        sink,
        firewall=None,
        clock: Optional[Callable[[], datetime]] = None,
    ):
        self.config = config
        self.sink = sink
        self.firewall = firewall if firewall is not None else NullFirewall()
        self.stats = SensorStats()
        self.host_key = generate_host_key()
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._slots = threading.Semaphore(config.max_concurrent_sessions)
        self._active: set[threading.Thread] = set()
        self._lock = threading.Lock()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "SensorServer":
        try:
            self._listener = socket.create_server(
                (self.config.host, self.config.port), backlog=128, reuse_port=False
            )
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.config.host}:{self.config.port}: {exc}") from None
        self._listener.settimeout(0.2)
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True, name="sensor-accept")
        self._accept_thread.start()
        logger.info("sensor listening on %s:%d", *self.bound_address)
        return self

    @property
    def bound_address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def stop(self):
        self._stop.set()
        if self._accept_thread:
            self._accept_thread.join(timeout=5)
        if self._listener:
            self._listener.close()
        with self._lock:
            active = list(self._active)
        for thread in active:
            thread.join(timeout=2)

    # -- accept path ----------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            if self.firewall.is_blocked(addr[0], self.config.port):
                self.stats.blocked += 1
                self.emit(
                    EventKind.BLOCKED_ATTEMPT,
                    session=secrets.token_hex(6),
                    src=addr,
                    dst=conn.getsockname()[:2],
                    message="connection refused: source is firewall-denied",
                )
                conn.close()
                continue
            if not self._slots.acquire(blocking=False):
                self.stats.saturated += 1
                conn.close()
                continue
            thread = threading.Thread(target=self._serve_connection, args=(conn, addr), daemon=True)
            with self._lock:
                self._active.add(thread)
            thread.start()

    def _serve_connection(self, conn: socket.socket, addr: tuple):
        session_id = secrets.token_hex(6)
        started = time.monotonic()
        self.stats.connections += 1
        dst = conn.getsockname()[:2]
        callbacks = _SessionCallbacks(self, session_id, addr, dst)
        self.emit(
            EventKind.SESSION_CONNECT,
            session=session_id,
            src=addr,
            dst=dst,
            message=f"New connection: {addr[0]}:{addr[1]}",
        )
        try:
            conn.settimeout(self.config.session_idle_timeout)
            transport = ServerTransport(conn, self.host_key, self.config.banner, callbacks)
            transport.run()
        except SessionCut:
            pass
        except (ProtocolViolation, ConnectionClosed, socket.timeout):
            self.stats.protocol_errors += 1
        except OSError:
            pass
        except Exception:
            logger.exception("session %s crashed", session_id)
        finally:
            duration = time.monotonic() - started
            self.emit(
                EventKind.SESSION_CLOSED,
                session=session_id,
                src=addr,
                dst=dst,
                message=f"Connection lost after {duration:.1f} seconds",
                duration=round(duration, 6),
            )
            try:
                conn.close()
            except OSError:
                pass
            self._slots.release()
            with self._lock:
                self._active.discard(threading.current_thread())

    # -- event emission ----------------------------------------------------------

    def emit(self, kind: EventKind, session: str, src: tuple, dst: tuple, message: str = "", **payload):
        event = HoneypotEvent(
            kind=kind,
            timestamp=self._clock(),
            session=session,
            src_ip=src[0],
            src_port=int(src[1]),
            dst_ip=dst[0],
            dst_port=int(dst[1]),
            sensor=self.config.sensor_name,
            message=message,
            **payload,
        )
        for attempt in range(3):
            try:
                self.sink.append(event)
                return
            except Exception:
                time.sleep(0.05 * (attempt + 1))
        self.stats.sink_failures += 1
        logger.error("event sink failed repeatedly; %s event counted as lost", kind.value)


class BindFailure(OSError):
    pass


def run_sensor(
    config: SensorConfig,
    sink,
    firewall=None,
    stop_event: Optional[threading.Event] = None,
):
    """Blocking convenience wrapper: serve until stop_event (or forever)."""
    server = SensorServer(config, sink, firewall=firewall)
    server.start()
    try:
        while stop_event is None or not stop_event.is_set():
            time.sleep(0.2)
    finally:
        server.stop()
