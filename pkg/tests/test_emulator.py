import hashlib
import json
from collections import Counter
from datetime import datetime, timezone

import pytest

from decoyloop.emulator import (
    BruteForce,
    CampaignProfile,
    Interactive,
    ReconOnly,
    TargetUnreachable,
    Timing,
    load_credential_fixture,
    benchmark_dataset,
    benchmark_tactic_incidents,
    parse_profile,
    run_campaign,
    write_incidents,
    BENCHMARK_TACTIC_COUNTS,
)
from decoyloop.events import EventKind, assemble_sessions, parse_event
from decoyloop.firewall import RuleTable
from decoyloop.metrics import attack_counts, defense_stats, engagement_stats
from decoyloop.respond import load_actions
from decoyloop.sensor import CollectorSink, SensorConfig, SensorServer
from .test_sensor import free_port, _wait_for

EPOCH = datetime(2025, 5, 15, tzinfo=timezone.utc)


def _counts(events):
    return Counter(e.kind for e in events)


def test_credential_fixture_loads_100_pairs():
    pairs = load_credential_fixture()
    assert len(pairs) == 100
    assert ("root", "123456") in pairs


# -- synthetic mode -----------------------------------------------------------------

def test_brute_force_ground_truth(tmp_path):
    profile = CampaignProfile(
        name="bf", phases=[BruteForce(attempts=10)], seed=7, epoch=EPOCH,
    )
    result = run_campaign(profile, f"out:{tmp_path / 'bf.jsonl'}")
    expected = {
        EventKind.SESSION_CONNECT: 1,
        EventKind.SESSION_CLOSED: 1,
        EventKind.LOGIN_FAILED: 10,
    }
    assert result.ground_truth == expected
    assert dict(_counts(result.events)) == expected
    # log round-trips through the parser
    parsed = [parse_event(line) for line in open(result.path)]
    assert dict(_counts(parsed)) == expected


def test_brute_force_session_grouping(tmp_path):
    profile = CampaignProfile(
        name="bf", phases=[BruteForce(attempts=10, attempts_per_session=4)], seed=7, epoch=EPOCH,
    )
    result = run_campaign(profile, f"out:{tmp_path / 'bf.jsonl'}")
    counts = _counts(result.events)
    assert counts[EventKind.SESSION_CONNECT] == 3  # 4+4+2
    assert counts[EventKind.LOGIN_FAILED] == 10
    assembly = assemble_sessions(result.events)
    assert [len(s.login_outcomes) for s in assembly.sessions] == [4, 4, 2]


def test_interactive_ground_truth(tmp_path):
    profile = CampaignProfile(
        name="ia",
        phases=[Interactive(username="root", password="123456",
                            commands=("uname -a", "ls", "cat /etc/passwd"))],
        seed=3,
        epoch=EPOCH,
    )
    result = run_campaign(profile, f"out:{tmp_path / 'ia.jsonl'}")
    counts = _counts(result.events)
    assert counts[EventKind.LOGIN_SUCCESS] == 1
    assert counts[EventKind.COMMAND_INPUT] == 3
    assert result.ground_truth[EventKind.COMMAND_INPUT] == 3


def test_recon_ground_truth(tmp_path):
    profile = CampaignProfile(name="rc", phases=[ReconOnly(banner_grabs=4)], seed=3, epoch=EPOCH)
    result = run_campaign(profile, f"out:{tmp_path / 'rc.jsonl'}")
    counts = _counts(result.events)
    assert counts[EventKind.CLIENT_VERSION] == counts[EventKind.CLIENT_KEX] == 4
    assert counts[EventKind.SESSION_CONNECT] == 4


def test_mixed_campaign_ground_truth_soundness(tmp_path):
    import random

    rng = random.Random(99)
    for trial in range(10):
        phases = []
        for _ in range(rng.randrange(1, 5)):
            roll = rng.random()
            if roll < 0.4:
                phases.append(BruteForce(attempts=rng.randrange(1, 20),
                                         attempts_per_session=rng.choice([0, 1, 3, 7])))
            elif roll < 0.7:
                phases.append(ReconOnly(banner_grabs=rng.randrange(1, 6)))
            else:
                phases.append(Interactive(username="root", password="123456",
                                          commands=tuple("cmd%d" % i for i in range(rng.randrange(0, 5))),
                                          pre_failures=rng.randrange(0, 4)))
        profile = CampaignProfile(name=f"t{trial}", phases=phases, seed=trial, epoch=EPOCH)
        result = run_campaign(profile, f"out:{tmp_path / f't{trial}.jsonl'}")
        assert dict(_counts(result.events)) == result.ground_truth, f"trial {trial}"


def test_seed_determinism_byte_identical(tmp_path):
    profile_args = dict(
        name="det",
        phases=[BruteForce(attempts=8, attempts_per_session=2), ReconOnly(banner_grabs=2)],
        seed=1234,
        epoch=EPOCH,
        timing=Timing(kind="uniform", low=0.2, high=2.0),
    )
    first = run_campaign(CampaignProfile(**profile_args), f"out:{tmp_path / 'a.jsonl'}")
    second = run_campaign(CampaignProfile(**profile_args), f"out:{tmp_path / 'b.jsonl'}")
    hash_a = hashlib.sha256(open(first.path, "rb").read()).hexdigest()
    hash_b = hashlib.sha256(open(second.path, "rb").read()).hexdigest()
    assert hash_a == hash_b


def test_different_seed_changes_bytes(tmp_path):
    base = dict(name="det", phases=[BruteForce(attempts=8)], epoch=EPOCH)
    first = run_campaign(CampaignProfile(seed=1, **base), f"out:{tmp_path / 'a.jsonl'}")
    second = run_campaign(CampaignProfile(seed=2, **base), f"out:{tmp_path / 'b.jsonl'}")
    assert open(first.path).read() != open(second.path).read()


def test_parse_profile_yaml_shape():
    profile = parse_profile(
        {
            "name": "demo",
            "mode": "synthetic",
            "source_ips": ["203.0.113.9"],
            "seed": 5,
            "epoch": "2025-05-15T00:00:00.000000Z",
            "timing": {"kind": "exponential", "rate": 2.0},
            "phases": [
                {"kind": "brute_force", "attempts": 5},
                {"kind": "recon", "banner_grabs": 2},
                {"kind": "interactive", "username": "root", "password": "123456",
                 "commands": ["uname -a"], "pre_failures": 1},
            ],
        }
    )
    assert profile.timing.kind == "exponential"
    assert isinstance(profile.phases[0], BruteForce)
    assert profile.epoch == EPOCH
    assert profile.ground_truth()[EventKind.LOGIN_FAILED] == 6


def test_profile_validation():
    with pytest.raises(ValueError):
        CampaignProfile(name="empty", phases=[])
    with pytest.raises(ValueError):
        CampaignProfile(name="m", phases=[ReconOnly(1)], mode="teleport")


# -- live mode ------------------------------------------------------------------------

@pytest.fixture
def live_sensor():
    sink = CollectorSink()
    server = SensorServer(SensorConfig(host="127.0.0.1", port=free_port()), sink)
    server.start()
    yield server, sink
    server.stop()


def test_live_brute_force_campaign(live_sensor):
    server, sink = live_sensor
    host, port = server.bound_address
    profile = CampaignProfile(
        name="live-bf",
        mode="live",
        phases=[BruteForce(attempts=6, attempts_per_session=3,
                           credentials=(("root", "nope1"), ("root", "nope2"), ("root", "nope3"),
                                        ("admin", "nope4"), ("admin", "nope5"), ("admin", "nope6")))],
        seed=5,
        source_ips=("127.0.0.31",),
    )
    result = run_campaign(profile, f"tcp:{host}:{port}")
    assert result.live.sessions_completed == 2
    assert result.live.logins_attempted == 6
    assert result.live.logins_succeeded == 0
    assert _wait_for(lambda: sum(1 for e in sink.events if e.kind is EventKind.LOGIN_FAILED) == 6)
    assert all(e.src_ip == "127.0.0.31" for e in sink.events)


def test_live_interactive_campaign(live_sensor):
    server, sink = live_sensor
    host, port = server.bound_address
    profile = CampaignProfile(
        name="live-ia",
        mode="live",
        phases=[Interactive(username="root", password="123456",
                            commands=("uname -a", "cat /etc/passwd"), pre_failures=1)],
        seed=5,
        source_ips=("127.0.0.32",),
    )
    result = run_campaign(profile, f"tcp:{host}:{port}")
    assert result.live.logins_succeeded == 1
    assert result.live.commands_run == 2
    assert _wait_for(lambda: sum(1 for e in sink.events if e.kind is EventKind.COMMAND_INPUT) == 2)


def test_live_campaign_closure_after_block():
    """Once the firewall denies the campaign source, further sessions are
    refused and the campaign records them."""
    sink = CollectorSink()
    table = RuleTable(whitelist=())
    server = SensorServer(SensorConfig(host="127.0.0.1", port=free_port()), sink, firewall=table)
    server.start()
    try:
        host, port = server.bound_address
        profile = CampaignProfile(
            name="closure", mode="live",
            phases=[ReconOnly(banner_grabs=2)], seed=5, source_ips=("127.0.0.33",),
        )
        first = run_campaign(profile, f"tcp:{host}:{port}")
        assert first.live.sessions_completed == 2
        table.upsert_deny("127.0.0.33")
        second = run_campaign(profile, f"tcp:{host}:{port}")
        assert second.live.refused == 2
        assert second.live.sessions_completed == 0
        assert _wait_for(
            lambda: sum(1 for e in sink.events if e.kind is EventKind.BLOCKED_ATTEMPT) == 2
        )
    finally:
        server.stop()


def test_live_target_unreachable():
    port = free_port()  # nothing listening
    profile = CampaignProfile(name="u", mode="live", phases=[ReconOnly(banner_grabs=1)], seed=1)
    with pytest.raises(TargetUnreachable):
        run_campaign(profile, f"tcp:127.0.0.1:{port}")


def test_live_parallel_identities(live_sensor):
    server, sink = live_sensor
    host, port = server.bound_address
    profile = CampaignProfile(
        name="par", mode="live", phases=[ReconOnly(banner_grabs=6)], seed=5,
        source_ips=("127.0.0.34", "127.0.0.35"), parallelism=3,
    )
    result = run_campaign(profile, f"tcp:{host}:{port}")
    assert result.live.sessions_completed == 6
    assert _wait_for(lambda: sum(1 for e in sink.events if e.kind is EventKind.SESSION_CLOSED) == 6)
    assert {e.src_ip for e in sink.events} <= {"127.0.0.34", "127.0.0.35"}


# -- benchmark dataset -------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark_data(tmp_path_factory):
    return benchmark_dataset(str(tmp_path_factory.mktemp("benchmark")))


def test_benchmark_totals(benchmark_data):
    events = [parse_event(line) for line in open(benchmark_data.log_path)]
    counts = attack_counts(events)
    assert counts.total == 12224
    assert counts.successful == 2008
    assert counts.failed == 9292
    assert f"{counts.ratio:.1f}:1" == "4.6:1"


def test_benchmark_engagement_and_delays(benchmark_data):
    events = [parse_event(line) for line in open(benchmark_data.log_path)]
    assembly = assemble_sessions(events)
    assert len(assembly.sessions) == 12224
    stats = engagement_stats(assembly.sessions)
    assert stats.filtered_mean == pytest.approx(4.23, abs=0.05)
    assert stats.median == pytest.approx(3.6, abs=0.05)
    defense = defense_stats(load_actions(benchmark_data.actions_path))
    assert defense.block.median == pytest.approx(0.78, abs=1e-6)
    assert defense.mttb == pytest.approx(0.86, abs=1e-6)


def test_benchmark_two_peak_days(benchmark_data):
    from decoyloop.metrics import daily_histogram
    from datetime import date

    events = [parse_event(line) for line in open(benchmark_data.log_path)]
    rows = daily_histogram(events)
    by_total = sorted(rows, key=lambda r: -r.total)
    assert {r.day for r in by_total[:2]} == {date(2025, 5, 18), date(2025, 5, 23)}


def test_benchmark_tactic_incident_counts(tmp_path):
    incidents = benchmark_tactic_incidents()
    from decoyloop.mitre import tactic_summary

    summary = tactic_summary(incidents)
    assert {t.value: n for t, n in summary.tactic_counts} == BENCHMARK_TACTIC_COUNTS
    path = tmp_path / "incidents.jsonl"
    write_incidents(incidents, str(path))
    assert len(path.read_text().splitlines()) == sum(BENCHMARK_TACTIC_COUNTS.values())
    # file round-trips through Incident.from_dict
    from decoyloop.detect import Incident

    reloaded = [Incident.from_dict(json.loads(line)) for line in open(path)]
    assert {t.value: n for t, n in tactic_summary(reloaded).tactic_counts} == BENCHMARK_TACTIC_COUNTS
