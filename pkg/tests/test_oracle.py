import json
import threading
import urllib.request

import numpy as np
import pytest

from steal_lab.data import gen_blobs
from steal_lab.errors import ConfigError, ProtocolError, TransportError
from steal_lab.extraction import TargetSpec, accuracy, train_target
from steal_lab.layers import DenseLayer
from steal_lab.network import Network
from steal_lab.oracle import (InProcessOracle, OracleMetadata, QueryLedger,
                              query_in_chunks, remote_oracle)
from steal_lab.server import serve


def constant_prob_net(probs):
    """Logits fixed at log(probs): every input maps to the same distribution."""
    k = len(probs)
    w = np.zeros((k, 2))
    b = np.log(np.asarray(probs))
    return Network([DenseLayer(w, b, "identity")], 2, k)


@pytest.fixture
def trained_target():
    ds = gen_blobs(3, 2, 400, 0.3, seed=8)
    return train_target(TargetSpec("small", epochs=15), ds, seed=1), ds


@pytest.fixture
def server(trained_target):
    net, _ = trained_target
    srv = serve(net, name="test-target")
    yield srv
    srv.stop()


class TestInProcessOracle:
    def test_fixed_probs_give_argmax_label(self):
        oracle = InProcessOracle(constant_prob_net([0.2, 0.5, 0.3]))
        labels = oracle.query(np.zeros((3, 2)))
        assert labels.tolist() == [1, 1, 1]

    def test_training_inputs_consistent_with_accuracy(self, trained_target):
        net, ds = trained_target
        oracle = InProcessOracle(net)
        labels = oracle.query(ds.features[:400])
        expected_acc = accuracy(net, ds.features, ds.labels)
        assert np.mean(labels == ds.labels) == pytest.approx(expected_acc)

    def test_dimension_mismatch(self, trained_target):
        oracle = InProcessOracle(trained_target[0])
        with pytest.raises(ProtocolError):
            oracle.query(np.zeros((2, 5)))

    def test_oversized_batch(self, trained_target):
        oracle = InProcessOracle(trained_target[0], max_batch=16)
        with pytest.raises(ProtocolError):
            oracle.query(np.zeros((17, 2)))

    def test_non_finite_inputs_rejected(self, trained_target):
        oracle = InProcessOracle(trained_target[0])
        bad = np.zeros((1, 2))
        bad[0, 0] = np.inf
        with pytest.raises(ProtocolError):
            oracle.query(bad)

    def test_ledger_counts_rows(self, trained_target):
        oracle = InProcessOracle(trained_target[0])
        oracle.query(np.zeros((5, 2)))
        oracle.query(np.zeros((3, 2)))
        assert oracle.stats() == {"total_queries": 8}
        total, log = oracle.ledger.snapshot()
        assert total == 8
        assert [n for _, n in log] == [5, 3]

    def test_batch_splitting_never_changes_labels(self, trained_target):
        net, ds = trained_target
        oracle = InProcessOracle(net)
        x = ds.features[:64]
        whole = oracle.query(x)
        split = np.concatenate([oracle.query(x[:20]), oracle.query(x[20:])])
        assert np.array_equal(whole, split)
        chunked = query_in_chunks(oracle, x, chunk=7)
        assert np.array_equal(whole, chunked)

    def test_rejects_stochastic_network(self, rng):
        from steal_lab.layers import McDropoutLayer
        net = Network([McDropoutLayer(0.5, DenseLayer.init(rng, 2, 2,
                                                           "identity"))], 2, 2)
        with pytest.raises(ConfigError):
            InProcessOracle(net)

    def test_metadata_validation(self):
        with pytest.raises(ConfigError):
            OracleMetadata(input_dim=0, num_classes=3, name="x")
        with pytest.raises(ConfigError):
            OracleMetadata(input_dim=2, num_classes=1, name="x")


class TestWireProtocol:
    def test_metadata_roundtrip(self, server):
        remote = remote_oracle(server.endpoint)
        meta = remote.metadata
        assert meta.input_dim == 2
        assert meta.num_classes == 3
        assert meta.name == "test-target"

    def test_remote_equals_in_process_bitwise(self, server, trained_target):
        net, ds = trained_target
        remote = remote_oracle(server.endpoint)
        local = InProcessOracle(net)
        x = ds.features[:128]
        assert np.array_equal(remote.query(x), local.query(x))

    def test_row_order_preserved(self, server, trained_target):
        _, ds = trained_target
        remote = remote_oracle(server.endpoint)
        x = ds.features[:32]
        labels = remote.query(x)
        reversed_labels = remote.query(x[::-1])
        assert np.array_equal(labels, reversed_labels[::-1])

    def test_stats_endpoint_counts(self, server):
        remote = remote_oracle(server.endpoint)
        before = remote.stats()["total_queries"]
        remote.query(np.zeros((4, 2)))
        assert remote.stats()["total_queries"] == before + 4

    def test_hard_label_opacity(self, server):
        # The wire responses expose labels and counts only, never
        # probabilities or any float-valued payload.
        body = json.dumps({"inputs": [[0.0, 0.0]]}).encode()
        req = urllib.request.Request(server.endpoint + "/query", data=body,
                                     headers={"Content-Type": "application/json"},
                                     method="POST")
        with urllib.request.urlopen(req) as resp:
            payload = json.loads(resp.read())
        assert set(payload) == {"labels"}
        assert all(isinstance(v, int) for v in payload["labels"])
        with urllib.request.urlopen(server.endpoint + "/metadata") as resp:
            meta = json.loads(resp.read())
        assert set(meta) == {"input_dim", "num_classes", "name"}
        with urllib.request.urlopen(server.endpoint + "/stats") as resp:
            stats = json.loads(resp.read())
        assert set(stats) == {"total_queries"}

    def test_malformed_request_is_machine_readable_400(self, server):
        req = urllib.request.Request(server.endpoint + "/query",
                                     data=b"{broken",
                                     headers={"Content-Type": "application/json"},
                                     method="POST")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req)
        assert err.value.code == 400
        assert "error" in json.loads(err.value.read())

    def test_wrong_dims_is_400(self, server):
        remote = remote_oracle(server.endpoint)
        with pytest.raises(ProtocolError):
            remote.query(np.zeros((1, 9)))

    def test_unknown_path_is_404(self, server):
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(server.endpoint + "/probabilities")
        assert err.value.code == 404

    def test_oversized_batch_is_400(self, trained_target):
        net, _ = trained_target
        srv = serve(net, max_batch=8)
        try:
            body = json.dumps({"inputs": [[0.0, 0.0]] * 9}).encode()
            req = urllib.request.Request(srv.endpoint + "/query", data=body,
                                         method="POST")
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(req)
            assert err.value.code == 400
            assert "exceeds" in json.loads(err.value.read())["error"]
        finally:
            srv.stop()

    def test_concurrent_clients_conserve_ledger(self, server):
        clients = 8
        batches = 20
        rows = 5
        errors = []

        def worker():
            try:
                remote = remote_oracle(server.endpoint)
                for _ in range(batches):
                    remote.query(np.zeros((rows, 2)))
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        before = server.oracle.stats()["total_queries"]
        threads = [threading.Thread(target=worker) for _ in range(clients)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        after = server.oracle.stats()["total_queries"]
        assert after - before == clients * batches * rows


class TestRemoteOracleClient:
    def test_unreachable_endpoint(self):
        with pytest.raises(TransportError):
            remote_oracle("http://127.0.0.1:9", )

    def test_metadata_mismatch_is_config_error(self, server):
        with pytest.raises(ConfigError):
            remote_oracle(server.endpoint, expect_input_dim=7)
        with pytest.raises(ConfigError):
            remote_oracle(server.endpoint, expect_num_classes=11)

    def test_retries_transient_failures(self, trained_target, monkeypatch):
        net, _ = trained_target
        srv = serve(net)
        try:
            remote = remote_oracle(srv.endpoint)
            real = urllib.request.urlopen
            failures = {"left": 2}

            def flaky(*args, **kwargs):
                if failures["left"] > 0:
                    failures["left"] -= 1
                    raise ConnectionError("flaky transport")
                return real(*args, **kwargs)

            monkeypatch.setattr(urllib.request, "urlopen", flaky)
            labels = remote.query(np.zeros((2, 2)))
            assert labels.shape == (2,)
            assert failures["left"] == 0
        finally:
            srv.stop()


def test_ledger_thread_safety_direct():
    ledger = QueryLedger()
    threads = [threading.Thread(target=lambda: [ledger.record(3)
                                                for _ in range(200)])
               for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total, log = ledger.snapshot()
    assert total == 8 * 200 * 3
    assert len(log) == 8 * 200
