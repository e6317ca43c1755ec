"""Smaller contracts: spirals through the full grid, checkpointed-surrogate
evaluation, and the error branches not exercised elsewhere."""

import numpy as np
import pytest

from steal_lab.cli import main
from steal_lab.config import ExperimentConfig
from steal_lab.data import gen_blobs
from steal_lab.errors import ConfigError, DataFormatError, DomainError, ShapeError
from steal_lab.experiment import expected_report_rows, run_experiment
from steal_lab.extraction import SurrogateSpec
from steal_lab.network import Network, uq_loss
from steal_lab.oracle import query_in_chunks, InProcessOracle
from steal_lab.predictive import mc_predict, ParamSampler
from steal_lab.reporting import read_rows
from steal_lab.tensor import AdamState, adam_step
from steal_lab.layers import DenseLayer


def test_spirals_full_grid_cell():
    config = ExperimentConfig(dataset="spirals", out="ignored", classes=2,
                              train_points=300, test_points=150, noise=0.1,
                              epochs=4, bnn_epochs=4, m_values=(4,),
                              members=2, families=("baseline", "bnn"),
                              trunks=("arch_B",), target_sizes=("small",))
    result = run_experiment(config)
    assert len(result.rows) == expected_report_rows(config)
    assert all(r["fidelity"] is not None for r in result.rows)
    assert all(r["dataset"] == "spirals" for r in result.rows)


def test_gen_data_spirals(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("dataset = spirals\nclasses = 2\ntrain_points = 120\n"
                   f"test_points = 110\nseeds = 3\nout = {tmp_path / 'd'}\n")
    assert main(["gen-data", "--config", str(cfg)]) == 0
    text = (tmp_path / "d" / "train_seed3.csv").read_text()
    assert text.splitlines()[0] == "f0,f1,label"
    assert len(text.splitlines()) == 121


def test_steal_saves_surrogate_checkpoints_and_evaluate_loads_them(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    out = tmp_path / "out"
    cfg.write_text("dataset = blobs\ntrain_points = 240\ntest_points = 120\n"
                   "epochs = 6\nbnn_epochs = 6\nmembers = 2\nm_values = 8\n"
                   "families = mcd,deep_ensemble\ntrunks = arch_B\n"
                   f"target_sizes = small\nseeds = 0\nout = {out}\n")
    assert main(["train-target", "--config", str(cfg)]) == 0
    target = out / "checkpoints" / "target_small_seed0.json"
    assert main(["steal", "--config", str(cfg), "--checkpoint", str(target)]) == 0
    mcd_ckpt = out / "checkpoints" / "surrogate_mcd_arch_B.json"
    assert mcd_ckpt.exists()
    assert (out / "checkpoints" / "surrogate_deep_ensemble_arch_B_m0.json").exists()
    assert (out / "checkpoints" / "surrogate_deep_ensemble_arch_B_m1.json").exists()
    # the stochastic surrogate checkpoint evaluates through kind inference
    code = main(["evaluate", "--config", str(cfg), "--surrogate",
                 str(mcd_ckpt), "--checkpoint", str(target), "--m", "8"])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("fidelity 0.") or line == "fidelity 1.0000"


def test_serve_unstarted_then_started(rng):
    from steal_lab.server import serve
    net = Network([DenseLayer(np.eye(2), np.zeros(2), "identity")], 2, 2)
    server = serve(net, start=False)
    server.start()
    try:
        from steal_lab.oracle import remote_oracle
        assert remote_oracle(server.endpoint).metadata.num_classes == 2
    finally:
        server.stop()


def test_adam_step_domain_errors():
    w = np.zeros(2)
    state = AdamState.for_param(w)
    with pytest.raises(DomainError):
        adam_step(w, np.zeros(2), state, lr=0.0)
    with pytest.raises(ShapeError):
        adam_step(w, np.zeros(3), state, lr=0.1)


def test_uq_loss_rejects_negative_weight(rng):
    net = Network([DenseLayer.init(rng, 2, 2, "identity")], 2, 2)
    with pytest.raises(DomainError):
        uq_loss(net, np.zeros((1, 2)), np.array([0]), None, -0.1, n_data=1)


def test_mc_predict_rejects_bad_rng(rng):
    net = Network([DenseLayer.init(rng, 2, 2, "identity")], 2, 2)
    sampler = ParamSampler("deterministic", [net])
    stoch = Network([DenseLayer.init(rng, 2, 2, "identity")], 2, 2)
    with pytest.raises(ConfigError):
        mc_predict(ParamSampler("stochastic", [stoch], 4), np.zeros((1, 2)),
                   rng="tomorrow")


def test_query_in_chunks_empty(rng):
    net = Network([DenseLayer(np.eye(2), np.zeros(2), "identity")], 2, 2)
    oracle = InProcessOracle(net)
    labels = query_in_chunks(oracle, np.zeros((0, 2)))
    assert labels.shape == (0,)
    assert oracle.stats()["total_queries"] == 0


def test_read_rows_header_mismatch(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("wrong,header\n1,2\n")
    with pytest.raises(DataFormatError):
        read_rows(path, columns=("a", "b"))


def test_blobs_one_dimensional():
    ds = gen_blobs(3, 1, 60, 0.05, seed=4)
    assert ds.dims == 1
    # means sit on a line, classes ordered along it
    m = [ds.features[ds.labels == c].mean() for c in range(3)]
    assert m[0] < m[1] < m[2]


def test_surrogate_spec_validation():
    with pytest.raises(ConfigError):
        SurrogateSpec("boosting")
    with pytest.raises(ConfigError):
        SurrogateSpec("mcd", trunk="arch_Z")
    with pytest.raises(ConfigError):
        SurrogateSpec("mcd", m_passes=0)
    assert SurrogateSpec("het_ensemble", trunk="arch_A").trunk == "mixed"
    assert SurrogateSpec("bnn").effective_epochs == 50
    assert SurrogateSpec("mcd").effective_epochs == 30


def test_config_validation_branches():
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="blobs", out="x", oracle="ftp://nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="spirals", out="x", classes=5)
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="blobs", out="x", seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="blobs", out="x", dropout_rate=1.0)
