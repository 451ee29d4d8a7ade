"""JSON inference service over HTTP and newline-delimited stdio.

Request: ``{"scene": {...}, "trace": false}``. Response: either
``{"behaviour": {...}}`` (plus ``"trace"`` when asked) or ``{"error": {...}}``.
The engine configuration is an immutable snapshot shared by all requests.
"""

from __future__ import annotations

import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .dsl import (
    STRICT,
    DocumentError,
    DslParseError,
    _load_json,
    behaviour_to_json,
    scene_from_json,
    trace_to_json,
)
from .errors import InputError, RuleEngineError, SceneValidationError
from .evaluator import EngineConfig, infer
from .model import Scene

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


def error_json(exc: RuleEngineError) -> dict:
    err = exc.to_json()
    if isinstance(exc, DslParseError):
        err.update(offset=exc.offset, expected=list(exc.expected))
    elif isinstance(exc, DocumentError):
        err["path"] = exc.path
        if exc.rule_id is not None:
            err["rule"] = exc.rule_id
    elif isinstance(exc, SceneValidationError):
        err["violations"] = [str(v) for v in exc.violations]
    return err


def respond(cfg: EngineConfig, scene: Scene, with_trace: bool = False) -> dict:
    """Run the engine; engine errors become an ``error`` member."""
    try:
        behaviour, trace = infer(cfg, scene)
    except RuleEngineError as exc:
        out = {"error": error_json(exc)}
        if with_trace and exc.trace is not None:
            out["trace"] = trace_to_json(exc.trace, cfg.order)
        return out
    out = {"behaviour": behaviour_to_json(behaviour)}
    if with_trace:
        out["trace"] = trace_to_json(trace, cfg.order)
    return out


def parse_request(cfg: EngineConfig, data, mode: str = STRICT) -> tuple[Scene, bool]:
    doc = _load_json(data, "request")
    if not isinstance(doc, dict) or "scene" not in doc:
        raise DocumentError("request must be an object with a 'scene'")
    unknown = set(doc) - {"scene", "trace"}
    if unknown:
        raise DocumentError(f"unexpected keys {sorted(unknown)}")
    with_trace = doc.get("trace", False)
    if not isinstance(with_trace, bool):
        raise DocumentError("'trace' must be a boolean", "trace")
    return scene_from_json(doc["scene"], cfg.maneuver_schema, mode, "scene"), with_trace


def handle(cfg: EngineConfig, data, mode: str = STRICT) -> tuple[int, dict]:
    """One request to ``(http status, response document)``."""
    try:
        scene, with_trace = parse_request(cfg, data, mode)
    except InputError as exc:
        return HTTPStatus.BAD_REQUEST, {"error": error_json(exc)}
    out = respond(cfg, scene, with_trace)
    return (HTTPStatus.UNPROCESSABLE_ENTITY if "error" in out else HTTPStatus.OK), out


def health(cfg: EngineConfig) -> dict:
    return {
        "status": "ok",
        "rules": {
            "maneuver": len(cfg.maneuver_theory),
            "parameter": len(cfg.parameter_theory),
        },
    }


def _line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def serve_stdio(cfg: EngineConfig, stdin, stdout, mode: str = STRICT) -> int:
    """One response line per non-blank request line, in order. Returns the count."""
    n = 0
    for raw in stdin:
        if not raw.strip():
            continue
        _, out = handle(cfg, raw.rstrip("\r\n"), mode)
        stdout.write(_line(out))
        stdout.flush()
        n += 1
    return n


def make_http_server(cfg: EngineConfig, host: str = "127.0.0.1", port: int = 0,
                     mode: str = STRICT) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, status, obj):
            body = _line(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _not_found(self):
            self._send(HTTPStatus.NOT_FOUND,
                       {"error": {"kind": "not-found", "detail": self.path}})

        def do_GET(self):
            if self.path == "/health":
                self._send(HTTPStatus.OK, health(cfg))
            else:
                self._not_found()

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self.close_connection = True
                self._send(HTTPStatus.BAD_REQUEST,
                           {"error": {"kind": "input-error", "detail": "bad Content-Length"}})
                return
            body = self.rfile.read(length)
            if self.path != "/infer":
                self._not_found()
                return
            status, out = handle(cfg, body, mode)
            self._send(status, out)

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server
