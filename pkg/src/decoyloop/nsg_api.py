"""Mock NSG REST API over a RuleTable.

Reproduces the get-rules / put-rule / delete-rule round trip an
orchestrator would perform against a cloud NSG endpoint:

    GET    /securityRules          -> JSON list of active rules (+etag each)
    GET    /securityRules/{name}   -> one rule or 404
    PUT    /securityRules/{name}   -> create (201) or replace (200)
    DELETE /securityRules/{name}   -> 204, or 404 for unknown names

PUT honors ``If-Match`` for optimistic concurrency (412 on a stale tag).
Every mutation funnels through the same RuleTable validation and audit
path as direct calls.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .firewall import (
    FirewallRule,
    PriorityConflict,
    RuleTable,
    RuleValidation,
    StaleVersion,
    WhitelistedAddress,
)

RULES_PATH = "/securityRules"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    table: RuleTable = None  # patched onto the class per server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: Optional[dict | list] = None, headers: Optional[dict] = None):
        payload = b"" if body is None else json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        for key, value in (headers or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    def _rule_name(self) -> Optional[str]:
        if self.path == RULES_PATH or self.path == RULES_PATH + "/":
            return None
        if self.path.startswith(RULES_PATH + "/"):
            return self.path[len(RULES_PATH) + 1 :]
        return ""

    def _rule_body(self, rule: FirewallRule) -> dict:
        data = rule.to_dict()
        data["etag"] = self.table.etag(rule.name)
        return data

    def do_GET(self):
        name = self._rule_name()
        if name is None:
            self._send(200, [self._rule_body(r) for r in self.table.rules()])
        elif name:
            rule = self.table.get(name)
            if rule is None or rule.expired(self.table.now()):
                self._send(404, {"error": f"no rule named {name!r}"})
            else:
                self._send(200, self._rule_body(rule), headers={"ETag": self.table.etag(name)})
        else:
            self._send(404, {"error": "unknown path"})

    def do_PUT(self):
        name = self._rule_name()
        if not name:
            self._send(404, {"error": "PUT requires /securityRules/{name}"})
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            data = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(data, dict):
                raise ValueError("body must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            self._send(400, {"error": f"malformed body: {exc}"})
            return
        body_name = data.get("name")
        if body_name and body_name != name:
            self._send(400, {"error": "body name does not match path"})
            return
        data["name"] = name
        try:
            rule = FirewallRule.from_dict(data)
        except RuleValidation as exc:
            self._send(400, {"error": str(exc)})
            return
        try:
            stored, created = self.table.put_rule(rule, if_match=self.headers.get("If-Match"))
        except StaleVersion:
            self._send(412, {"error": "stale If-Match"})
            return
        except PriorityConflict as exc:
            self._send(409, {"error": str(exc)})
            return
        except WhitelistedAddress as exc:
            self._send(400, {"error": f"source overlaps protected whitelist: {exc}"})
            return
        except RuleValidation as exc:
            self._send(400, {"error": str(exc)})
            return
        self._send(201 if created else 200, self._rule_body(stored), headers={"ETag": self.table.etag(name)})

    def do_DELETE(self):
        name = self._rule_name()
        if not name:
            self._send(404, {"error": "DELETE requires /securityRules/{name}"})
            return
        try:
            self.table.delete_rule(name, provenance="rest")
        except KeyError:
            self._send(404, {"error": f"no rule named {name!r}"})
            return
        self._send(204)


class MockNsgServer:
    """Threaded HTTP server wrapper with start/stop lifecycle."""

    def __init__(self, table: RuleTable, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"table": table})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True, name="mock-nsg")
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def serve_mock_nsg(table: RuleTable, host: str = "127.0.0.1", port: int = 0) -> MockNsgServer:
    """Bind and start the mock NSG API; returns the running server."""
    return MockNsgServer(table, host, port).start()
