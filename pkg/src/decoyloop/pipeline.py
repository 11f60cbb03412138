"""Wires the full closed loop into one process, and the offline replay.

Run-all hosts sensor + store + detector + orchestrator + firewall (+ the
mock NSG API) so that a successful attacker login turns into a firewall
deny and SOC alert with no operator involvement. Shutdown is ordered:
sensor first (stop producing), then detector, then orchestrator, then
stores flush.

Replay is the offline twin: one log in, incidents + simulated actions +
report out, deterministically — every clock in the replay path runs on
event time, so identical inputs give identical outputs (wall-clock-free
report bytes included).
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

from .config import PipelineConfig
from .detect import Detector, Incident, IncidentWriter, default_ruleset, load_ruleset, run_detector
from .events import HoneypotEvent, assemble_sessions, parse_event
from .firewall import RuleTable
from .metrics import IqrFilter, MetricsReport, build_report, render_report
from .mitre import default_classifier, load_classifier
from .nsg_api import serve_mock_nsg
from .respond import ActionLog, BlockAction, Orchestrator, load_actions
from .sensor import SensorServer, StoreSink
from .store import EventStore

logger = logging.getLogger(__name__)


def _load_rules(config: PipelineConfig):
    ruleset = load_ruleset(config.ruleset_path) if config.ruleset_path else default_ruleset()
    classifier = load_classifier(config.classifier_path) if config.classifier_path else default_classifier()
    return ruleset, classifier


class Pipeline:
    """All components of the closed loop under one lifecycle."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.stop_event = threading.Event()
        Path(config.store_dir).parent.mkdir(parents=True, exist_ok=True)
        self.store = EventStore(config.store_dir)
        self.firewall = RuleTable(
            snapshot_path=config.firewall_snapshot,
            whitelist=config.firewall_whitelist,
            default_ttl=config.firewall_default_ttl,
        )
        ruleset, classifier = _load_rules(config)
        self.detector = Detector(ruleset, classifier)
        self.incident_writer = IncidentWriter(config.incidents_path)
        self.action_log = ActionLog(config.actions_path)
        self.orchestrator = Orchestrator(
            config.policy,
            self.firewall,
            soc_sink=config.soc_sink,
            action_log=self.action_log,
        )
        self.sensor = SensorServer(config.sensor, StoreSink(self.store), firewall=self._sensor_firewall())
        self.incident_queue: "queue.Queue[Incident]" = queue.Queue()
        self.nsg_server = None
        self._threads: list[threading.Thread] = []

    def _sensor_firewall(self):
        table = self.firewall
        port = self.config.sensor.port

        class _Query:
            def is_blocked(self, ip, dst_port=port, protocol="Tcp"):
                return table.is_blocked(ip, dst_port, protocol)

        return _Query()

    def start(self) -> "Pipeline":
        if self.config.firewall_api:
            host, _, port = self.config.firewall_api.rpartition(":")
            self.nsg_server = serve_mock_nsg(self.firewall, host, int(port))
        subscription = self.store.subscribe(buffer=8192)
        sinks = [self.incident_writer, self.incident_queue.put]
        detector_thread = threading.Thread(
            target=run_detector,
            args=(self.detector, subscription, sinks, self.stop_event),
            daemon=True,
            name="detector",
        )
        orchestrator_thread = threading.Thread(
            target=self.orchestrator.run,
            args=(self.incident_queue, self.stop_event),
            daemon=True,
            name="orchestrator",
        )
        self._threads = [detector_thread, orchestrator_thread]
        for thread in self._threads:
            thread.start()
        try:
            self.sensor.start()
        except Exception:
            self.stop()  # unwind the already-running components
            raise
        return self

    def stop(self):
        # order: stop producing, then drain detection, then response
        self.sensor.stop()
        self.stop_event.set()
        for thread in self._threads:
            thread.join(timeout=5)
        if self.nsg_server:
            self.nsg_server.stop()
        self.store.close()

    def wait(self, poll: float = 0.2):
        try:
            while not self.stop_event.is_set():
                self.stop_event.wait(poll)
        except KeyboardInterrupt:
            pass


@dataclass
class ReplayResult:
    events: list[HoneypotEvent]
    incidents: list[Incident]
    actions: list[BlockAction]
    report: MetricsReport
    out_dir: Optional[str] = None
    files: Optional[dict] = None


def replay(
    log_path: str,
    config: PipelineConfig,
    out_dir: Optional[str] = None,
    formats: tuple[str, ...] = ("markdown", "csv", "json"),
) -> ReplayResult:
    """Offline pipeline over one recorded log.

    Detection, dedupe, and firewall TTLs all run on event time; block
    actions are simulated as instantaneous (start == success == trigger
    instant) so the output is a pure function of (log, config). Wall
    clocks never enter the artifacts.
    """
    events: list[HoneypotEvent] = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(parse_event(line))
    events.sort(key=lambda e: e.timestamp)

    ruleset, classifier = _load_rules(config)
    sim_now = {"now": events[0].timestamp if events else datetime.now(timezone.utc)}
    detector = Detector(ruleset, classifier, clock=lambda: sim_now["now"])
    incidents: list[Incident] = []
    for event in events:
        sim_now["now"] = event.timestamp
        incidents.extend(detector.process(event))

    firewall = RuleTable(
        whitelist=config.firewall_whitelist,
        default_ttl=config.firewall_default_ttl,
        clock=lambda: sim_now["now"],
    )
    orchestrator = Orchestrator(
        config.policy, firewall, soc_sink=None, action_log=None, clock=lambda: sim_now["now"],
        sleep=lambda seconds: None,
    )
    for incident in incidents:
        sim_now["now"] = incident.last_event_at
        orchestrator.handle_incident(incident)
    actions = orchestrator.actions

    window = None
    if events:
        window = (events[0].timestamp, events[-1].timestamp + timedelta(microseconds=1))
    report = build_report(
        events,
        assemble_sessions(events).sessions,
        actions,
        incidents=incidents,
        window=window,
        excluded_dates=config.excluded_dates,
        classifier=classifier,
    )

    files = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "incidents.jsonl", "w", encoding="utf-8") as fh:
            for incident in incidents:
                fh.write(json.dumps(incident.to_dict()) + "\n")
        with open(out / "actions.jsonl", "w", encoding="utf-8") as fh:
            for action in actions:
                fh.write(json.dumps(action.to_dict()) + "\n")
        for fmt in formats:
            files.update(render_report(report, fmt, str(out)))
    return ReplayResult(
        events=events, incidents=incidents, actions=actions, report=report,
        out_dir=out_dir, files=files or None,
    )


def report_from_files(
    config: PipelineConfig,
    store_dir: Optional[str] = None,
    actions_path: Optional[str] = None,
    incidents_path: Optional[str] = None,
    window: Optional[tuple[datetime, datetime]] = None,
) -> MetricsReport:
    """Build a report from persisted artifacts (store + logs)."""
    store = EventStore(store_dir or config.store_dir)
    try:
        if window:
            events = store.query(window[0], window[1])
        else:
            events = store.query()
    finally:
        store.close()
    actions = load_actions(actions_path) if actions_path else []
    incidents = []
    if incidents_path and Path(incidents_path).exists():
        with open(incidents_path, "r", encoding="utf-8") as fh:
            incidents = [Incident.from_dict(json.loads(line)) for line in fh if line.strip()]
    _, classifier = _load_rules(config)
    return build_report(
        events,
        assemble_sessions(events).sessions,
        actions,
        incidents=incidents,
        window=window,
        excluded_dates=config.excluded_dates,
        iqr=IqrFilter(),
        classifier=classifier,
    )
