import numpy as np
import pytest

from steal_lab.errors import DataFormatError, DomainError
from steal_lab.extraction import SurrogateSpec, build_surrogate, build_target, TargetSpec
from steal_lab.layers import DenseLayer, McDropoutLayer, VariationalDenseLayer
from steal_lab.network import (Network, load_checkpoint, network_from_dict,
                               network_to_dict, save_checkpoint)


def test_stochastic_forward_requires_rng(rng):
    net = Network([McDropoutLayer(0.5, DenseLayer.init(rng, 2, 2, "identity"))],
                  2, 2)
    with pytest.raises(DomainError):
        net.forward(np.zeros((1, 2)))


def test_param_count_strictly_increasing_with_size():
    counts = []
    for size in ("small", "medium", "large"):
        net = build_target(TargetSpec(size), input_dim=2, num_classes=3, seed=0)
        counts.append(net.param_count())
    assert counts[0] < counts[1] < counts[2]


@pytest.mark.parametrize("family", ["baseline", "mcd", "cd", "bnn"])
def test_checkpoint_roundtrip_exact(tmp_path, family):
    spec = SurrogateSpec(family, "arch_B")
    net = build_surrogate(spec, 2, 3, seed=9)
    path = tmp_path / "net.json"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.input_dim == 2 and loaded.num_classes == 3
    for p, q in zip(net.params(), loaded.params()):
        assert p.name == q.name
        assert np.array_equal(p.value, q.value)
    x = np.random.default_rng(3).standard_normal((4, 2))
    if net.is_stochastic:
        a = net.forward(x, np.random.default_rng(1))
        b = loaded.forward(x, np.random.default_rng(1))
    else:
        a, b = net.forward(x), loaded.forward(x)
    assert np.array_equal(a, b)


def test_checkpoint_bytes_stable(tmp_path):
    net = build_target(TargetSpec("small"), 2, 3, seed=4)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(net, p1)
    save_checkpoint(net, p2)
    assert p1.read_bytes() == p2.read_bytes()
    # save -> load -> save is also byte-identical
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DataFormatError):
        load_checkpoint(path)
    path.write_text('{"format": "other"}')
    with pytest.raises(DataFormatError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_detected():
    net = build_target(TargetSpec("small"), 2, 3, seed=4)
    blob = network_to_dict(net)
    blob["params"][0]["shape"] = [1, 1]
    with pytest.raises(DataFormatError):
        network_from_dict(blob)


def test_checkpoint_missing_param_detected():
    net = build_target(TargetSpec("small"), 2, 3, seed=4)
    blob = network_to_dict(net)
    blob["params"] = blob["params"][:-1]
    with pytest.raises(DataFormatError):
        network_from_dict(blob)


def test_variational_checkpoint_roundtrips_prior(tmp_path):
    net = Network([VariationalDenseLayer.init(np.random.default_rng(0), 2, 2,
                                              prior_std=0.7)], 2, 2)
    path = tmp_path / "v.json"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.layers[0].prior_std == 0.7
