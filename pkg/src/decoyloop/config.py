"""Pipeline configuration: loading, precedence, validation.

Precedence is defaults < config file < environment < flags. The
environment knows ``DECOYLOOP_CONFIG`` (config file path) and
``DECOYLOOP_STORE`` (store directory). ``validate_config`` reports every
problem at once rather than stopping at the first.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Optional

import yaml

from .detect import Severity
from .firewall import DEFAULT_WHITELIST
from .respond import ResponsePolicy
from .sensor import CredentialPolicy, SensorConfig

ENV_CONFIG = "DECOYLOOP_CONFIG"
ENV_STORE = "DECOYLOOP_STORE"


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class PipelineConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    store_dir: str = "./decoyloop-data/store"
    ruleset_path: Optional[str] = None  # None -> built-in default rules
    classifier_path: Optional[str] = None  # None -> built-in patterns
    policy: ResponsePolicy = field(
        default_factory=lambda: ResponsePolicy(whitelist=DEFAULT_WHITELIST)
    )
    firewall_snapshot: Optional[str] = "./decoyloop-data/firewall.json"
    firewall_api: Optional[str] = None  # "host:port" to expose the mock NSG API
    firewall_whitelist: tuple[str, ...] = DEFAULT_WHITELIST
    firewall_default_ttl: float = 86400.0
    soc_webhook: Optional[str] = None
    soc_file: Optional[str] = "./decoyloop-data/soc_alerts.jsonl"
    report_dir: str = "./decoyloop-data/reports"
    excluded_dates: tuple[date, ...] = ()

    @property
    def soc_sink(self) -> Optional[str]:
        return self.soc_webhook or self.soc_file

    @property
    def incidents_path(self) -> str:
        return str(Path(self.store_dir).parent / "incidents.jsonl")

    @property
    def actions_path(self) -> str:
        return str(Path(self.store_dir).parent / "actions.jsonl")


def _parse_listen(text: str) -> tuple[str, int]:
    host, _, port = str(text).rpartition(":")
    if not host:
        raise ValueError(f"listen address needs host:port, got {text!r}")
    return host, int(port)


def _config_from_dict(data: dict) -> PipelineConfig:
    config = PipelineConfig()
    sensor_raw = data.get("sensor", {}) or {}
    sensor_kwargs = {}
    if "listen" in sensor_raw:
        sensor_kwargs["host"], sensor_kwargs["port"] = _parse_listen(sensor_raw["listen"])
    for key, attr in (
        ("banner", "banner"),
        ("sensor_name", "sensor_name"),
        ("max_concurrent_sessions", "max_concurrent_sessions"),
        ("session_idle_timeout", "session_idle_timeout"),
        ("shell_profile", "shell_profile"),
    ):
        if key in sensor_raw:
            sensor_kwargs[attr] = sensor_raw[key]
    if "policy" in sensor_raw:
        sensor_kwargs["policy"] = CredentialPolicy.from_dict(sensor_raw["policy"])
    config = replace(config, sensor=SensorConfig(**sensor_kwargs))

    if data.get("store"):
        config = replace(config, store_dir=str(data["store"]))
    if "ruleset" in data:
        config = replace(config, ruleset_path=data["ruleset"] and str(data["ruleset"]))
    if "classifier" in data:
        config = replace(config, classifier_path=data["classifier"] and str(data["classifier"]))
    if "response" in data and data["response"]:
        config = replace(config, policy=ResponsePolicy.from_dict(data["response"]))

    firewall_raw = data.get("firewall", {}) or {}
    if "snapshot" in firewall_raw:
        config = replace(config, firewall_snapshot=firewall_raw["snapshot"] and str(firewall_raw["snapshot"]))
    if "api_listen" in firewall_raw:
        config = replace(config, firewall_api=firewall_raw["api_listen"] and str(firewall_raw["api_listen"]))
    if "whitelist" in firewall_raw:
        config = replace(config, firewall_whitelist=tuple(str(c) for c in firewall_raw["whitelist"] or ()))
    if "default_ttl" in firewall_raw:
        config = replace(config, firewall_default_ttl=float(firewall_raw["default_ttl"]))

    soc_raw = data.get("soc", {}) or {}
    if "webhook" in soc_raw:
        config = replace(config, soc_webhook=soc_raw["webhook"] and str(soc_raw["webhook"]))
    if "file" in soc_raw:
        config = replace(config, soc_file=soc_raw["file"] and str(soc_raw["file"]))

    report_raw = data.get("report", {}) or {}
    if "out_dir" in report_raw:
        config = replace(config, report_dir=str(report_raw["out_dir"]))
    if "excluded_dates" in report_raw:
        config = replace(
            config,
            excluded_dates=tuple(date.fromisoformat(str(d)) for d in report_raw["excluded_dates"] or ()),
        )
    return config


def load_config(
    path: Optional[str] = None,
    env: Optional[dict] = None,
    overrides: Optional[dict] = None,
) -> PipelineConfig:
    """Resolve the effective configuration.

    ``overrides`` carries flag-level settings: keys matching the file
    schema's dotted paths (currently ``store`` and ``sensor.listen``) plus
    anything a subcommand passes straight through.
    """
    env = env if env is not None else dict(os.environ)
    path = path or env.get(ENV_CONFIG)
    data: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError([f"config root must be a mapping, got {type(loaded).__name__}"])
        data = loaded
    try:
        config = _config_from_dict(data)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError([str(exc)]) from None
    if env.get(ENV_STORE):
        config = replace(config, store_dir=env[ENV_STORE])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "store":
            config = replace(config, store_dir=str(value))
        elif key == "listen":
            host, port = _parse_listen(value)
            config = replace(config, sensor=replace(config.sensor, host=host, port=port))
        elif key == "banner":
            config = replace(config, sensor=replace(config.sensor, banner=str(value)))
        elif hasattr(config, key):
            config = replace(config, **{key: value})
        else:
            raise ConfigError([f"unknown override {key!r}"])
    return config


def validate_config(path: str) -> list[str]:
    """All validation errors for a config file (empty list means ok)."""
    errors: list[str] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        return [f"config unreadable: {exc}"]
    except yaml.YAMLError as exc:
        return [f"config is not valid YAML: {exc}"]
    if not isinstance(data, dict):
        return [f"config root must be a mapping, got {type(data).__name__}"]

    sensor_raw = data.get("sensor", {}) or {}
    if "listen" in sensor_raw:
        try:
            host, port = _parse_listen(sensor_raw["listen"])
            if not 1 <= port <= 65535:
                errors.append(f"sensor.listen: port out of range: {port}")
        except (ValueError, TypeError) as exc:
            errors.append(f"sensor.listen: {exc}")
    banner = sensor_raw.get("banner")
    if banner is not None and not str(banner).startswith("SSH-2.0-"):
        errors.append("sensor.banner: must start with SSH-2.0-")
    if "policy" in sensor_raw:
        try:
            CredentialPolicy.from_dict(sensor_raw["policy"])
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"sensor.policy: {exc}")

    response_raw = data.get("response", {}) or {}
    import ipaddress

    for index, cidr in enumerate(response_raw.get("whitelist", []) or []):
        try:
            ipaddress.ip_network(str(cidr), strict=False)
        except ValueError:
            errors.append(f"response.whitelist[{index}]: invalid CIDR {cidr!r}")
    if "min_severity" in response_raw:
        try:
            Severity.parse(response_raw["min_severity"])
        except Exception:
            errors.append(f"response.min_severity: unknown severity {response_raw['min_severity']!r}")
    for key in ("interaction_threshold", "block_ttl", "retry_attempts", "retry_backoff", "dedupe_window"):
        if key in response_raw and response_raw[key] is not None:
            try:
                value = float(response_raw[key])
                if value < 0:
                    errors.append(f"response.{key}: must be >= 0")
            except (TypeError, ValueError):
                errors.append(f"response.{key}: not a number: {response_raw[key]!r}")

    firewall_raw = data.get("firewall", {}) or {}
    for index, cidr in enumerate(firewall_raw.get("whitelist", []) or []):
        try:
            ipaddress.ip_network(str(cidr), strict=False)
        except ValueError:
            errors.append(f"firewall.whitelist[{index}]: invalid CIDR {cidr!r}")
    if "api_listen" in firewall_raw and firewall_raw["api_listen"]:
        try:
            _parse_listen(firewall_raw["api_listen"])
        except (ValueError, TypeError) as exc:
            errors.append(f"firewall.api_listen: {exc}")

    for key, label in (("ruleset", "ruleset"), ("classifier", "classifier")):
        value = data.get(key)
        if value and not os.path.exists(str(value)):
            errors.append(f"{label}: file not found: {value}")
    if data.get("ruleset") and os.path.exists(str(data["ruleset"])):
        from .detect import RulesetError, load_ruleset

        try:
            load_ruleset(str(data["ruleset"]))
        except RulesetError as exc:
            errors.append(f"ruleset: {exc}")

    report_raw = data.get("report", {}) or {}
    for index, value in enumerate(report_raw.get("excluded_dates", []) or []):
        try:
            date.fromisoformat(str(value))
        except ValueError:
            errors.append(f"report.excluded_dates[{index}]: not an ISO date: {value!r}")

    sensor_listen = sensor_raw.get("listen")
    api_listen = firewall_raw.get("api_listen")
    if sensor_listen and api_listen and str(sensor_listen) == str(api_listen):
        errors.append("sensor.listen and firewall.api_listen conflict (same bind)")
    return errors


def default_config_path() -> Path:
    import importlib.resources

    return Path(str(importlib.resources.files("decoyloop").joinpath("data/default_config.yaml")))
