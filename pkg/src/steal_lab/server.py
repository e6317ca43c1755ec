"""HTTP service exposing an in-process oracle over the wire protocol:

    GET  /metadata -> {"input_dim": d, "num_classes": k, "name": s}
    POST /query    -> {"inputs": [[f64,...],...]} => {"labels": [int,...]}
    GET  /stats    -> {"total_queries": n}

Responses are JSON with full round-trip numeric precision and preserve row
order. The model is read-only after load; the ledger is updated under a lock,
so arbitrary concurrent clients see conserved query counts.
"""

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import ProtocolError
from .oracle import InProcessOracle

log = logging.getLogger("steal_lab.server")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def _send_json(self, code, obj):
        blob = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _fail(self, code, reason):
        self._send_json(code, {"error": reason})

    def do_GET(self):
        oracle = self.server.oracle
        if self.path == "/metadata":
            meta = oracle.metadata
            self._send_json(200, {"input_dim": meta.input_dim,
                                  "num_classes": meta.num_classes,
                                  "name": meta.name})
        elif self.path == "/stats":
            self._send_json(200, oracle.stats())
        else:
            self._fail(404, f"unknown path {self.path!r}")

    def do_POST(self):
        if self.path != "/query":
            self._fail(404, f"unknown path {self.path!r}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            payload = json.loads(body.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            self._fail(400, f"request body is not valid JSON: {exc}")
            return
        if not isinstance(payload, dict) or "inputs" not in payload:
            self._fail(400, "request must be a JSON object with an 'inputs' key")
            return
        try:
            labels = self.server.oracle.query(payload["inputs"])
        except ProtocolError as exc:
            self._fail(400, str(exc))
            return
        except (TypeError, ValueError) as exc:
            self._fail(400, f"inputs are not a numeric matrix: {exc}")
            return
        self._send_json(200, {"labels": [int(v) for v in labels]})

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class OracleServer:
    """A ThreadingHTTPServer bound to an oracle, startable in the background."""

    def __init__(self, oracle, host="127.0.0.1", port=0):
        self.oracle = oracle
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.oracle = oracle
        self._httpd.daemon_threads = True
        self._thread = None

    @property
    def address(self):
        host, port = self._httpd.server_address[:2]
        return host, port

    @property
    def endpoint(self):
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        log.info("oracle %r serving on %s", self.oracle.metadata.name,
                 self.endpoint)
        return self

    def serve_forever(self):
        log.info("oracle %r serving on %s", self.oracle.metadata.name,
                 self.endpoint)
        self._httpd.serve_forever()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None


def serve(network, bind="127.0.0.1:0", name=None, max_batch=None, start=True):
    """Build an OracleServer for a network. ``bind`` is HOST:PORT; port 0
    picks a free one (see .endpoint for the resolved address). With
    start=True the server runs on a background thread; pass start=False and
    call serve_forever() to block the caller instead."""
    host, _, port = bind.rpartition(":")
    kwargs = {} if max_batch is None else {"max_batch": max_batch}
    oracle = InProcessOracle(network, name=name, **kwargs)
    server = OracleServer(oracle, host or "127.0.0.1", int(port))
    return server.start() if start else server
