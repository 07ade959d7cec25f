"""HTTP front end for the aggregator.

A single TCP port with JSON bodies at fixed paths:

    GET  /v1/model?variant=svd|bpr   -> model snapshot
    POST /v1/update                  -> {"status": "accepted"|"stale"|"invalid", ...}
    POST /v1/telemetry               -> {"status": "accepted"|"rejected", ...}
    POST /v1/aggregate               -> {"status": "aggregated", "round": n}

/v1/aggregate is the operator's round trigger ({"variant": "svd"|"bpr"} body);
rounds are synchronous, not timer-driven.  Well-formed protocol exchanges
always answer 200 with a status body; malformed requests and unknown variants
answer 400 with {"error": <code>}; aggregating an empty buffer answers 409.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .protocol import Aggregator, ProtocolError, encode_wire, session_from_wire, update_from_wire


def _make_handler(aggregator: Aggregator):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep tests quiet
            pass

        def _reply(self, code: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            return json.loads(raw.decode("utf-8"))

        def do_GET(self):
            url = urlparse(self.path)
            if url.path != "/v1/model":
                self._reply(404, {"error": "unknown_endpoint"})
                return
            variant = parse_qs(url.query).get("variant", [""])[0]
            try:
                snapshot = aggregator.serve_model(variant)
            except ProtocolError as exc:
                self._reply(400, {"error": exc.code})
                return
            self._reply(200, snapshot)

        def do_POST(self):
            url = urlparse(self.path)
            try:
                data = self._read_json()
            except (json.JSONDecodeError, UnicodeDecodeError, ValueError):
                self._reply(400, {"error": "malformed_json"})
                return
            try:
                if url.path == "/v1/update":
                    ack = aggregator.submit_update(update_from_wire(data))
                elif url.path == "/v1/telemetry":
                    ack = aggregator.submit_telemetry(session_from_wire(data))
                elif url.path == "/v1/aggregate":
                    new_round = aggregator.aggregate_round(data["variant"])
                    self._reply(200, {"status": "aggregated", "round": new_round})
                    return
                else:
                    self._reply(404, {"error": "unknown_endpoint"})
                    return
            except ProtocolError as exc:
                code = 409 if exc.code == "nothing_to_aggregate" else 400
                self._reply(code, {"error": exc.code})
                return
            except (KeyError, TypeError, ValueError) as exc:
                self._reply(400, {"error": "malformed_message", "detail": str(exc)})
                return
            self._reply(200, encode_wire(ack))

    return Handler


class AggregatorServer:
    """Serves an Aggregator over HTTP on a background thread."""

    def __init__(self, aggregator: Aggregator, host: str = "127.0.0.1", port: int = 0):
        self.aggregator = aggregator
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(aggregator))
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def start(self) -> "AggregatorServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="aggregator-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def __enter__(self) -> "AggregatorServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
