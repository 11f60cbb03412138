"""Command-line entry point: one subcommand per pipeline stage plus the
all-in-one closed-loop mode.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, load_config, validate_config
from .detect import Detector, RulesetError, default_ruleset, load_ruleset
from .emulator import EmulatorError
from .events import EventError, parse_timestamp
from .firewall import FirewallError, RuleTable
from .metrics import UnknownFormat, render_report
from .pipeline import Pipeline, replay, report_from_files
from .respond import ActionLog, Orchestrator
from .sensor import BindFailure, FileSink, SensorServer, StoreSink
from .store import EventStore, SourceUnavailable, ingest, parse_source

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="decoyloop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"decoyloop {__version__}")
    parser.add_argument("--config", help="pipeline config file (or $DECOYLOOP_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sensor = sub.add_parser("sensor", help="run the SSH honeypot sensor standalone")
    sensor.add_argument("--listen", help="host:port (default from config)")
    sensor.add_argument("--banner", help="SSH identification banner")
    sensor.add_argument("--policy", choices=["accept_list", "accept_after_n", "reject_all"],
                        help="credential policy mode override")
    sensor.add_argument("--sink", help="file:<path> or store:<dir> (default: config store)")

    ing = sub.add_parser("ingest", help="pull events from a source into the store")
    ing.add_argument("--source", required=True, help="file:<path> | tcp:<host>:<port> | replay:<path>[:speed]")
    ing.add_argument("--store", help="store directory (default from config)")
    ing.add_argument("--lenient", action="store_true", help="skip bad lines instead of failing")

    det = sub.add_parser("detect", help="evaluate detection rules over a stored event range")
    det.add_argument("--store", help="store directory")
    det.add_argument("--ruleset", help="rule file (default: built-ins)")
    det.add_argument("--out", help="incident output file (default: <store>/../incidents.jsonl)")

    resp = sub.add_parser("respond", help="run the response workflow over an incident file")
    resp.add_argument("--incidents", required=True)

    fw = sub.add_parser("fw", help="inspect or edit the firewall rule table")
    fw.add_argument("--snapshot", help="rule table snapshot path (default from config)")
    fw_sub = fw.add_subparsers(dest="fw_command", required=True)
    fw_sub.add_parser("list")
    fw_block = fw_sub.add_parser("block")
    fw_block.add_argument("ip")
    fw_block.add_argument("--ttl", type=float, help="seconds (default: table TTL)")
    fw_unblock = fw_sub.add_parser("unblock")
    fw_unblock.add_argument("name")
    fw_sub.add_parser("expire-now")

    rep = sub.add_parser("report", help="compute and render the metrics report")
    rep.add_argument("--store", help="store directory")
    rep.add_argument("--actions", help="block-action log (actions.jsonl)")
    rep.add_argument("--incidents", help="incident file for the tactic table")
    rep.add_argument("--from", dest="t0", help="window start, ISO-8601 UTC")
    rep.add_argument("--to", dest="t1", help="window end (exclusive), ISO-8601 UTC")
    rep.add_argument("--format", default="all", choices=["csv", "md", "markdown", "json", "all"],
                     help="summary format; 'all' writes summary.csv/.md/.json")
    rep.add_argument("--out", required=True, help="output directory")

    atk = sub.add_parser("attack", help="run a seeded attack campaign")
    atk.add_argument("--profile", required=True, help="campaign profile YAML")
    atk.add_argument("--target", required=True, help="out:<path> | tcp:<host>:<port>")
    atk.add_argument("--seed", type=int, help="override the profile seed")
    atk.add_argument("--epoch", help="fixed epoch for synthetic timestamps (ISO-8601 UTC)")

    repl = sub.add_parser("replay", help="offline pipeline over a recorded log")
    repl.add_argument("--log", required=True)
    repl.add_argument("--out", help="write incidents/actions/report files here")

    sub.add_parser("run-all", help="run the whole closed loop until SIGINT/SIGTERM")

    val = sub.add_parser("validate-config", help="check a config file, reporting every error")
    val.add_argument("path")

    bench = sub.add_parser("benchmark", help="generate the synthetic 7-day benchmark dataset")
    bench.add_argument("--out", required=True)
    bench.add_argument("--seed", type=int, default=20250515)
    return parser


def _load(args, overrides=None):
    return load_config(path=args.config, overrides=overrides)


def _parse_window(args):
    t0 = parse_timestamp(args.t0) if getattr(args, "t0", None) else None
    t1 = parse_timestamp(args.t1) if getattr(args, "t1", None) else None
    if t0 and t1:
        return (t0, t1)
    return None


def cmd_sensor(args) -> int:
    overrides = {}
    if args.listen:
        overrides["listen"] = args.listen
    if args.banner:
        overrides["banner"] = args.banner
    config = _load(args, overrides)
    if args.policy:
        from dataclasses import replace

        from .sensor import CredentialMode, CredentialPolicy

        policy = CredentialPolicy(mode=CredentialMode(args.policy))
        config = replace(config, sensor=replace(config.sensor, policy=policy))
    store = None
    if args.sink and args.sink.startswith("file:"):
        sink = FileSink(args.sink[5:])
    else:
        store_dir = args.sink[6:] if args.sink and args.sink.startswith("store:") else config.store_dir
        Path(store_dir).parent.mkdir(parents=True, exist_ok=True)
        store = EventStore(store_dir)
        sink = StoreSink(store)
    stop = threading.Event()
    _hook_signals(stop)
    server = SensorServer(config.sensor, sink)
    server.start()
    print(f"sensor listening on {server.bound_address[0]}:{server.bound_address[1]}", flush=True)
    stop.wait()
    server.stop()
    if store is not None:
        store.close()
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _load(args, {"store": args.store} if args.store else None)
    source = parse_source(args.source)
    Path(config.store_dir).parent.mkdir(parents=True, exist_ok=True)
    store = EventStore(config.store_dir)
    stop = threading.Event()
    _hook_signals(stop)
    try:
        summary = ingest(source, store, lenient=args.lenient, stop_event=stop)
    finally:
        store.close()
    print(json.dumps({"accepted": summary.accepted, "skipped": summary.skipped,
                      "errors": summary.errors[:20]}))
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _load(args, {"store": args.store} if args.store else None)
    ruleset = load_ruleset(args.ruleset) if args.ruleset else (
        load_ruleset(config.ruleset_path) if config.ruleset_path else default_ruleset()
    )
    from .mitre import default_classifier, load_classifier

    classifier = load_classifier(config.classifier_path) if config.classifier_path else default_classifier()
    store = EventStore(config.store_dir)
    try:
        events = store.query()
    finally:
        store.close()
    sim = {"now": None}
    detector = Detector(ruleset, classifier, clock=lambda: sim["now"])
    out_path = args.out or config.incidents_path
    incidents = []
    for event in events:
        sim["now"] = event.timestamp
        incidents.extend(detector.process(event))
    with open(out_path, "w", encoding="utf-8") as fh:
        for incident in incidents:
            fh.write(json.dumps(incident.to_dict()) + "\n")
    print(f"{len(incidents)} incidents -> {out_path}")
    return EXIT_OK


def cmd_respond(args) -> int:
    config = _load(args)
    from .detect import Incident

    incidents = []
    with open(args.incidents, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                incidents.append(Incident.from_dict(json.loads(line)))
    table = RuleTable(
        snapshot_path=config.firewall_snapshot,
        whitelist=config.firewall_whitelist,
        default_ttl=config.firewall_default_ttl,
    )
    orchestrator = Orchestrator(
        config.policy, table, soc_sink=config.soc_sink, action_log=ActionLog(config.actions_path)
    )
    for incident in incidents:
        action = orchestrator.handle_incident(incident)
        print(f"incident {incident.id} {incident.entity_ip}: {action.outcome.value}"
              + (f" ({action.reason})" if action.reason else ""))
    return EXIT_OK


def cmd_fw(args) -> int:
    config = _load(args)
    snapshot = args.snapshot or config.firewall_snapshot
    table = RuleTable(
        snapshot_path=snapshot,
        whitelist=config.firewall_whitelist,
        default_ttl=config.firewall_default_ttl,
    )
    if args.fw_command == "list":
        for rule in table.rules():
            print(json.dumps(rule.to_dict()))
    elif args.fw_command == "block":
        rule, created = table.upsert_deny(args.ip, ttl=args.ttl, provenance="manual")
        print(f"{'created' if created else 'already-active'} {rule.name} priority {rule.priority}")
    elif args.fw_command == "unblock":
        table.delete_rule(args.name, provenance="manual")
        print(f"removed {args.name}")
    elif args.fw_command == "expire-now":
        removed = table.expire_rules()
        print(f"expired {len(removed)} rule(s)")
    return EXIT_OK


def cmd_report(args) -> int:
    overrides = {"store": args.store} if args.store else None
    config = _load(args, overrides)
    window = _parse_window(args)
    report = report_from_files(
        config,
        store_dir=args.store or config.store_dir,
        actions_path=args.actions,
        incidents_path=args.incidents,
        window=window,
    )
    formats = {"md": ["markdown"], "all": ["csv", "markdown", "json"]}.get(args.format, [args.format])
    files = {}
    for fmt in formats:
        for key, path in render_report(report, fmt, args.out).items():
            files[f"{key}.{fmt}" if key == "summary" else key] = path
    for key in sorted(files):
        print(files[key])
    return EXIT_OK


def cmd_attack(args) -> int:
    from .emulator import parse_profile, run_campaign

    with open(args.profile, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.epoch:
        data["epoch"] = args.epoch
    profile = parse_profile(data)
    result = run_campaign(profile, args.target)
    out = {"ground_truth": {k.value: v for k, v in result.ground_truth.items()},
           "truncated": result.truncated}
    if result.path:
        out["log"] = result.path
        out["events_written"] = len(result.events)
    if result.live:
        out["live"] = result.live.__dict__
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_replay(args) -> int:
    config = _load(args)
    result = replay(args.log, config, out_dir=args.out)
    counts = result.report.counts
    print(f"events={len(result.events)} incidents={len(result.incidents)} "
          f"actions={len(result.actions)} attacks={counts.total}")
    if args.out:
        print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    config = _load(args)
    pipeline = Pipeline(config)
    stop = threading.Event()
    _hook_signals(stop, also=pipeline.stop_event)
    try:
        pipeline.start()
    except BindFailure as exc:
        print(f"sensor: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    host, port = pipeline.sensor.bound_address
    print(f"closed loop running; sensor on {host}:{port}"
          + (f", NSG API on {pipeline.nsg_server.url}" if pipeline.nsg_server else ""), flush=True)
    stop.wait()
    pipeline.stop()
    return EXIT_OK


def cmd_validate_config(args) -> int:
    errors = validate_config(args.path)
    if not errors:
        print("ok")
        return EXIT_OK
    for error in errors:
        print(error)
    return EXIT_CONFIG


def cmd_benchmark(args) -> int:
    from .emulator import benchmark_dataset, benchmark_tactic_incidents, write_incidents

    dataset = benchmark_dataset(args.out, seed=args.seed)
    incidents_path = str(Path(args.out) / "benchmark_incidents.jsonl")
    write_incidents(benchmark_tactic_incidents(), incidents_path)
    print(json.dumps({"log": dataset.log_path, "actions": dataset.actions_path,
                      "incidents": incidents_path, "expected": dataset.expected}, indent=2))
    return EXIT_OK


def _hook_signals(stop: threading.Event, also: threading.Event = None):
    def handler(signum, frame):
        stop.set()
        if also is not None:
            also.set()

    for signum in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(signum, handler)
        except ValueError:
            pass  # not on the main thread (embedded use)


_COMMANDS = {
    "sensor": cmd_sensor,
    "ingest": cmd_ingest,
    "detect": cmd_detect,
    "respond": cmd_respond,
    "fw": cmd_fw,
    "report": cmd_report,
    "attack": cmd_attack,
    "replay": cmd_replay,
    "run-all": cmd_run_all,
    "validate-config": cmd_validate_config,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for error in exc.errors:
            print(f"config: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except (RulesetError, UnknownFormat) as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SourceUnavailable, BindFailure, FirewallError, EventError, EmulatorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
