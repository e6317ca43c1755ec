"""Network = an ordered layer stack, plus the UQ training loss and a
byte-stable JSON checkpoint format.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DomainError
from .layers import (ConcreteDropoutLayer, DenseLayer, McDropoutLayer,
                     VariationalDenseLayer)
from .tensor import cross_entropy, softmax_rows

CHECKPOINT_FORMAT = "steal-lab-checkpoint"
CHECKPOINT_VERSION = 1


class Network:
    """A feed-forward stack mapping (rows, input_dim) to (rows, num_classes) logits."""

    def __init__(self, layers, input_dim, num_classes, name="net"):
        self.layers = list(layers)
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.name = name

    @property
    def is_stochastic(self):
        return any(layer.stochastic for layer in self.layers)

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self):
        return sum(int(p.value.size) for p in self.params())

    def zero_grads(self):
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, x, rng=None):
        if self.is_stochastic and rng is None:
            raise DomainError(f"network {self.name!r} is stochastic; pass an rng")
        for layer in self.layers:
            x = layer.forward(x, rng)
        return x

    def backward(self, dlogits):
        for layer in reversed(self.layers):
            dlogits = layer.backward(dlogits)
        return dlogits

    def predict_probs(self, x, rng=None):
        return softmax_rows(self.forward(x, rng))

    def sample_noise(self, rngs, m):
        """Per-layer stacked noise for m Monte Carlo passes.

        ``rngs`` holds one Generator per layer; layer j's noise rows come
        from stream j only, so sample i's draw is reproducible without
        generating samples 0..i-1 of any other layer.
        """
        return [layer.sample_noise(rng, m) for layer, rng in zip(self.layers, rngs)]

    def forward_multi(self, x, noise):
        """Evaluate the stacked samples described by ``noise`` at once.

        x is (rows, input_dim); the result is (m, rows, num_classes) logits,
        bit-identical per sample to a sequential loop using the same noise.
        Activations stay 2-D through the deterministic prefix (a shared trunk
        is computed once) and lift to (m, rows, width) when the first
        stochastic layer broadcasts its per-sample noise in.
        """
        out = x
        for layer, layer_noise in zip(self.layers, noise):
            out = layer.forward_multi(out, layer_noise)
        return out

    def reg_loss(self, n_data):
        return sum(layer.reg_loss(n_data) for layer in self.layers)

    def add_reg_grads(self, weight, n_data):
        for layer in self.layers:
            layer.add_reg_grads(weight, n_data)

    def spec(self):
        return {"input_dim": self.input_dim, "num_classes": self.num_classes,
                "name": self.name,
                "layers": [layer.spec() for layer in self.layers]}


@dataclass
class UqLoss:
    """One training-loss evaluation: data term, regularizer, and its weight."""

    nll: float
    reg: float
    kl_weight: float

    @property
    def total(self):
        return self.nll + self.kl_weight * self.reg


def uq_loss(model, x, labels, rng, kl_weight, n_data):
    """Single-sample training loss: cross-entropy of one stochastic forward
    pass plus the weighted sum of the model's regularizer terms (KL for
    variational layers, the concrete penalty for CD layers, zero otherwise).
    """
    if kl_weight < 0:
        raise DomainError("kl_weight must be non-negative")
    probs = softmax_rows(model.forward(x, rng))
    nll = cross_entropy(probs, labels)
    return UqLoss(nll=nll, reg=model.reg_loss(n_data), kl_weight=kl_weight)


# ---------------------------------------------------------------------------
# Checkpoints: versioned JSON with layer specs and flat parameter arrays.
# Serialization is byte-stable for identical parameters (sorted keys, repr
# floats with full round-trip precision).
# ---------------------------------------------------------------------------

def _layer_from_spec(spec, fallback_name):
    kind = spec.get("type")
    name = spec.get("name", fallback_name)
    if kind == "dense":
        return DenseLayer(np.zeros((spec["out"], spec["in"])),
                          np.zeros(spec["out"]), spec["activation"], name)
    if kind == "mc_dropout":
        inner = _layer_from_spec(spec["inner"], f"{name}.inner")
        return McDropoutLayer(spec["rate"], inner, name)
    if kind == "concrete_dropout":
        inner = _layer_from_spec(spec["inner"], f"{name}.inner")
        return ConcreteDropoutLayer(inner, init_p=0.5,
                                    temperature=spec["temperature"],
                                    w_scale=spec["w_scale"],
                                    d_scale=spec["d_scale"], name=name)
    if kind == "variational_dense":
        shape = (spec["out"], spec["in"])
        return VariationalDenseLayer(np.zeros(shape), np.zeros(shape),
                                     np.zeros(spec["out"]), np.zeros(spec["out"]),
                                     spec["activation"], spec["prior_std"], name)
    raise DataFormatError(f"unknown layer type {kind!r} in checkpoint")


def network_to_dict(net):
    params = [{"name": p.name, "shape": list(p.value.shape),
               "data": [float(v) for v in p.value.reshape(-1)]}
              for p in net.params()]
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "spec": net.spec(), "params": params}


def network_from_dict(obj):
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError("not a steal-lab checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {obj.get('version')!r}")
    spec = obj["spec"]
    layers = [_layer_from_spec(layer_spec, f"layer{i}")
              for i, layer_spec in enumerate(spec["layers"])]
    net = Network(layers, spec["input_dim"], spec["num_classes"], spec["name"])
    params = {p.name: p for p in net.params()}
    seen = set()
    for entry in obj["params"]:
        name = entry["name"]
        if name not in params:
            raise DataFormatError(f"checkpoint parameter {name!r} does not match the layer spec")
        p = params[name]
        data = np.asarray(entry["data"], dtype=np.float64)
        if list(p.value.shape) != entry["shape"] or data.size != p.value.size:
            raise DataFormatError(f"checkpoint parameter {name!r} has wrong shape")
        p.value[...] = data.reshape(p.value.shape)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise DataFormatError(f"checkpoint missing parameters: {sorted(missing)}")
    return net


def save_checkpoint(net, path):
    blob = json.dumps(network_to_dict(net), sort_keys=True,
                      separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(blob)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"checkpoint is not valid JSON: {exc}") from exc
    return network_from_dict(obj)
