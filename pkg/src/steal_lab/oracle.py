"""Hard-label query oracles.

The target model sits behind an interface that returns argmax labels only —
never probabilities — and keeps a ledger of query usage. The same interface
is available in-process and as an HTTP client (see server.py for the service
side), and both are required to produce bit-identical labels for identical
inputs.
"""

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError, TransportError

DEFAULT_MAX_BATCH = 1024
RETRIES = 3
HTTP_TIMEOUT = 30.0


@dataclass(frozen=True)
class OracleMetadata:
    input_dim: int
    num_classes: int
    name: str

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")


class QueryLedger:
    """Thread-safe usage accounting: total row count plus per-batch log."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total_queries = 0
        self.per_batch_log = []

    def record(self, batch_size):
        with self._lock:
            self.total_queries += int(batch_size)
            self.per_batch_log.append((time.time(), int(batch_size)))

    def snapshot(self):
        with self._lock:
            return self.total_queries, list(self.per_batch_log)


def _validate_batch(inputs, input_dim, max_batch):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ProtocolError(f"query inputs must be 2-D, got shape {x.shape}")
    if x.shape[1] != input_dim:
        raise ProtocolError(
            f"query inputs have {x.shape[1]} features, oracle expects {input_dim}")
    if x.shape[0] > max_batch:
        raise ProtocolError(
            f"batch of {x.shape[0]} rows exceeds the maximum of {max_batch}")
    if not np.all(np.isfinite(x)):
        raise ProtocolError("query inputs contain non-finite values")
    return x


class InProcessOracle:
    """Hard-label oracle wrapping a trained network directly."""

    def __init__(self, network, name=None, max_batch=DEFAULT_MAX_BATCH):
        if network.is_stochastic:
            raise ConfigError("oracle targets must be deterministic networks")
        self._network = network
        self.max_batch = int(max_batch)
        self.ledger = QueryLedger()
        self._metadata = OracleMetadata(network.input_dim, network.num_classes,
                                        name or network.name)

    @property
    def metadata(self):
        return self._metadata

    def query(self, inputs):
        """Labels for a batch of inputs: per-row argmax of the target's
        probabilities, lowest class index on ties. Labels only — the
        probabilities never cross this boundary.
        """
        x = _validate_batch(inputs, self._metadata.input_dim, self.max_batch)
        probs = self._network.predict_probs(x)
        labels = np.argmax(probs, axis=1).astype(np.int64)
        self.ledger.record(x.shape[0])
        return labels

    def stats(self):
        total, _ = self.ledger.snapshot()
        return {"total_queries": total}


class RemoteOracle:
    """Client for the HTTP wire protocol; same interface as InProcessOracle.

    Queries are idempotent, so transport failures are retried up to RETRIES
    times. One in-flight request per client instance.
    """

    def __init__(self, endpoint, expect_input_dim=None, expect_num_classes=None,
                 timeout=HTTP_TIMEOUT):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.ledger = QueryLedger()
        meta = self._request("GET", "/metadata")
        try:
            self._metadata = OracleMetadata(int(meta["input_dim"]),
                                            int(meta["num_classes"]),
                                            str(meta["name"]))
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed metadata response: {meta!r}") from exc
        if expect_input_dim is not None and self._metadata.input_dim != expect_input_dim:
            raise ConfigError(
                f"oracle reports input_dim={self._metadata.input_dim}, "
                f"expected {expect_input_dim}")
        if expect_num_classes is not None and self._metadata.num_classes != expect_num_classes:
            raise ConfigError(
                f"oracle reports num_classes={self._metadata.num_classes}, "
                f"expected {expect_num_classes}")

    @property
    def metadata(self):
        return self._metadata

    def _request(self, method, path, body=None):
        url = self.endpoint + path
        data = None
        headers = {"Accept": "application/json"}
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            headers["Content-Type"] = "application/json"
        last_error = None
        for _ in range(1 + RETRIES):
            req = urllib.request.Request(url, data=data, headers=headers,
                                         method=method)
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                # A served error response is a protocol violation, not a
                # transport failure; do not retry.
                try:
                    reason = json.loads(exc.read().decode("utf-8")).get("error", "")
                except Exception:
                    reason = exc.reason
                raise ProtocolError(f"oracle rejected {method} {path}: "
                                    f"{exc.code} {reason}") from exc
            except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
                last_error = exc
        raise TransportError(f"oracle unreachable at {url!r} after "
                             f"{1 + RETRIES} attempts: {last_error}")

    def query(self, inputs):
        x = _validate_batch(np.asarray(inputs, dtype=np.float64),
                            self._metadata.input_dim, DEFAULT_MAX_BATCH)
        payload = {"inputs": [[float(v) for v in row] for row in x]}
        reply = self._request("POST", "/query", payload)
        if "labels" not in reply:
            raise ProtocolError(f"malformed query response: {reply!r}")
        labels = np.asarray(reply["labels"], dtype=np.int64)
        if labels.shape != (x.shape[0],):
            raise ProtocolError("oracle returned the wrong number of labels")
        self.ledger.record(x.shape[0])
        return labels

    def stats(self):
        return self._request("GET", "/stats")


def remote_oracle(endpoint, expect_input_dim=None, expect_num_classes=None):
    """Connect to a served oracle, checking its metadata against expectations."""
    return RemoteOracle(endpoint, expect_input_dim, expect_num_classes)


def query_in_chunks(oracle, inputs, chunk=DEFAULT_MAX_BATCH):
    """Query an arbitrarily large input matrix in transport-sized batches.

    Batch splitting never changes labels: query(A||B) == query(A)||query(B).
    """
    x = np.asarray(inputs, dtype=np.float64)
    parts = [oracle.query(x[i:i + chunk]) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
