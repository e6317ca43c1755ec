"""The stealing pipeline: train targets, query the oracle for a surrogate
training set, train each surrogate family while probing its prediction
variance every epoch, and score fidelity (label agreement with the oracle).
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, TrainingDivergedError
from .layers import (ConcreteDropoutLayer, DenseLayer, McDropoutLayer,
                     VariationalDenseLayer)
from .network import Network
from .oracle import query_in_chunks
from .predictive import ParamSampler, mc_predict, predict_labels, prediction_variance
from .seeding import (FIDELITY, MEMBER, PROBE, SURROGATE_INIT, SURROGATE_TRAIN,
                      TARGET_INIT, TARGET_TRAIN, derive_rng, derive_seed)
from .tensor import PROB_FLOOR, FlatAdam

FAMILIES = ("baseline", "mcd", "cd", "bnn", "deep_ensemble", "het_ensemble")
ENSEMBLE_FAMILIES = ("deep_ensemble", "het_ensemble")
TARGET_SIZES = ("small", "medium", "large")
TRUNK_NAMES = ("arch_A", "arch_B")
HET_TRUNK = "mixed"

# Hidden widths per target size class; parameter counts are strictly
# increasing small < medium < large for any (input_dim, num_classes).
TARGET_HIDDEN = {"small": (8,), "medium": (32, 16), "large": (64, 32, 16)}

# Surrogate feature trunks. arch_A deliberately matches the large target's
# hidden stack so architecture similarity effects are observable; arch_B is a
# different depth/width.
TRUNKS = {"arch_A": (64, 32, 16), "arch_B": (48, 24)}
HEAD_HIDDEN = 16

# Six distinct member architectures for the heterogeneous ensemble. The
# capacity range is deliberately wide (down to a 4-unit trunk, plus one
# linear trunk): heterogeneity in expressive power is what keeps the
# ensemble's prediction spread alive after the members agree on labels.
HET_ARCHS = (
    {"hidden": (16,), "activation": "relu"},
    {"hidden": (32, 16), "activation": "relu"},
    {"hidden": (4,), "activation": "relu"},
    {"hidden": (48,), "activation": "relu"},
    {"hidden": (24, 12, 6), "activation": "relu"},
    {"hidden": (20,), "activation": "identity"},
)

FAMILY_SAMPLER_KIND = {"baseline": "deterministic", "mcd": "mc_dropout",
                       "cd": "concrete", "bnn": "variational",
                       "deep_ensemble": "deep_ensemble",
                       "het_ensemble": "heterogeneous_ensemble"}

# Deep-ensemble members train with decoupled weight decay so they read as
# posterior samples; the other families train undecayed.
DE_WEIGHT_DECAY = 1e-4


@dataclass(frozen=True)
class TargetSpec:
    size_class: str
    epochs: int = 30
    lr: float = 1e-3

    def __post_init__(self):
        if self.size_class not in TARGET_SIZES:
            raise ConfigError(f"unknown target size {self.size_class!r}")

    @property
    def hidden(self):
        return TARGET_HIDDEN[self.size_class]


@dataclass(frozen=True)
class SurrogateSpec:
    family: str
    trunk: str = "arch_A"
    m_passes: int = 50
    epochs: int | None = None   # default 30, 50 for the slower-converging BNN
    members: int = 6
    dropout_rate: float = 0.5
    temperature: float = 0.1
    prior_std: float = 1.0
    lr: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown surrogate family {self.family!r}")
        if self.family == "het_ensemble":
            if self.trunk != HET_TRUNK:
                object.__setattr__(self, "trunk", HET_TRUNK)
        elif self.trunk not in TRUNK_NAMES:
            raise ConfigError(f"unknown trunk {self.trunk!r}")
        if self.m_passes < 1:
            raise ConfigError("m_passes must be >= 1")

    @property
    def effective_epochs(self):
        if self.epochs is not None:
            return self.epochs
        return 50 if self.family == "bnn" else 30


@dataclass
class VarianceCurve:
    """Per-epoch dataset-level prediction variance on the probe inputs."""

    family: str
    trunk: str
    values: list = field(default_factory=list)

    @property
    def final(self):
        return self.values[-1]

    @property
    def peak(self):
        return max(self.values)


def _dense_stack(rng, dims, activation="relu", name="trunk"):
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(DenseLayer.init(rng, d_in, d_out, activation,
                                      name=f"{name}{i}"))
    return layers


def build_target(spec, input_dim, num_classes, seed):
    rng = derive_rng(seed, TARGET_INIT)
    dims = (input_dim,) + spec.hidden
    layers = _dense_stack(rng, dims)
    layers.append(DenseLayer.init(rng, dims[-1], num_classes, "identity",
                                  name="out"))
    return Network(layers, input_dim, num_classes,
                   name=f"target-{spec.size_class}")


def _head_layers(rng, family, feat_dim, num_classes, spec):
    """Family-specific classification head: two layers, stochastic variants
    wrap or replace them while the trunk stays deterministic."""
    h = HEAD_HIDDEN
    if family in ("baseline", "deep_ensemble", "het_ensemble"):
        return [DenseLayer.init(rng, feat_dim, h, "relu", name="head0"),
                DenseLayer.init(rng, h, num_classes, "identity", name="head1")]
    if family == "mcd":
        return [McDropoutLayer(spec.dropout_rate,
                               DenseLayer.init(rng, feat_dim, h, "relu",
                                               name="head0.inner"), name="head0"),
                McDropoutLayer(spec.dropout_rate,
                               DenseLayer.init(rng, h, num_classes, "identity",
                                               name="head1.inner"), name="head1")]
    if family == "cd":
        return [ConcreteDropoutLayer(DenseLayer.init(rng, feat_dim, h, "relu",
                                                     name="head0.inner"),
                                     temperature=spec.temperature, name="head0"),
                ConcreteDropoutLayer(DenseLayer.init(rng, h, num_classes,
                                                     "identity",
                                                     name="head1.inner"),
                                     temperature=spec.temperature, name="head1")]
    if family == "bnn":
        return [VariationalDenseLayer.init(rng, feat_dim, h, "relu",
                                           prior_std=spec.prior_std, name="head0"),
                VariationalDenseLayer.init(rng, h, num_classes, "identity",
                                           prior_std=spec.prior_std, name="head1")]
    raise ConfigError(f"unknown surrogate family {family!r}")


def build_surrogate(spec, input_dim, num_classes, seed, member=None):
    """One surrogate network. For ensemble members pass the member index:
    it selects the init stream and, for het_ensemble, the architecture."""
    if member is None:
        rng = derive_rng(seed, SURROGATE_INIT)
    else:
        rng = derive_rng(seed, MEMBER, member)
    if spec.family == "het_ensemble":
        arch = HET_ARCHS[member % len(HET_ARCHS)]
        dims = (input_dim,) + arch["hidden"]
        layers = _dense_stack(rng, dims, arch["activation"])
    else:
        dims = (input_dim,) + TRUNKS[spec.trunk]
        layers = _dense_stack(rng, dims)
    layers += _head_layers(rng, spec.family, dims[-1], num_classes, spec)
    suffix = "" if member is None else f"-m{member}"
    return Network(layers, input_dim, num_classes,
                   name=f"surrogate-{spec.family}-{spec.trunk}{suffix}")


class NetworkTrainer:
    """Minibatch Adam training, one epoch at a time, so ensemble members can
    advance in lockstep between variance probes."""

    def __init__(self, net, features, labels, *, lr, batch_size=64, seed=0,
                 kl_weight=None, weight_decay=0.0):
        self.net = net
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_data = self.features.shape[0]
        self.batch_size = int(batch_size)
        self.seed = seed
        # Default regularizer weight: 1/N, the per-datum share of the KL /
        # concrete penalty matching the mean-reduced cross-entropy term.
        self.kl_weight = 1.0 / self.n_data if kl_weight is None else kl_weight
        self.weight_decay = weight_decay
        self.optimizer = FlatAdam(net.params(), lr, weight_decay=weight_decay)
        self.epoch_losses = []

    def run_epoch(self, epoch_index):
        # Softmax/cross-entropy are inlined (the public ops re-validate their
        # inputs, which is wasted work here and would turn a divergence into
        # a validation error instead of TrainingDivergedError).
        rng = derive_rng(self.seed, SURROGATE_TRAIN, epoch_index)
        order = rng.permutation(self.n_data)
        total = 0.0
        batches = 0
        rows = np.arange(self.batch_size)
        for start in range(0, self.n_data, self.batch_size):
            idx = order[start:start + self.batch_size]
            x = self.features[idx]
            y = self.labels[idx]
            self.optimizer.zero_grads()
            logits = self.net.forward(x, rng)
            if not np.all(np.isfinite(logits)):
                raise TrainingDivergedError(epoch_index)
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            probs = e / e.sum(axis=1, keepdims=True)
            picked = probs[rows[:x.shape[0]], y]
            nll = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
            reg = self.net.reg_loss(self.n_data)
            loss = nll + self.kl_weight * reg
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch_index)
            dlogits = probs.copy()
            dlogits[rows[:x.shape[0]], y] -= 1.0
            dlogits /= x.shape[0]
            self.net.backward(dlogits)
            if self.kl_weight > 0:
                self.net.add_reg_grads(self.kl_weight, self.n_data)
            self.optimizer.step()
            total += loss
            batches += 1
        mean_loss = total / batches
        self.epoch_losses.append(mean_loss)
        return mean_loss


def train_network(net, features, labels, *, epochs, lr, batch_size=64, seed=0,
                  kl_weight=None, weight_decay=0.0, epoch_hook=None):
    """Train to completion; returns the per-epoch mean losses."""
    trainer = NetworkTrainer(net, features, labels, lr=lr,
                             batch_size=batch_size, seed=seed,
                             kl_weight=kl_weight, weight_decay=weight_decay)
    for epoch in range(epochs):
        trainer.run_epoch(epoch)
        if epoch_hook is not None:
            epoch_hook(epoch, net)
    return trainer.epoch_losses


def accuracy(net, features, labels, rng=None):
    probs = net.predict_probs(np.asarray(features, dtype=np.float64), rng)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def train_target(spec, dataset, seed):
    """Train one target classifier from scratch (cross-entropy + Adam)."""
    net = build_target(spec, dataset.dims, dataset.num_classes, seed)
    train_network(net, dataset.features, dataset.labels, epochs=spec.epochs,
                  lr=spec.lr, seed=derive_seed(seed, TARGET_TRAIN))
    return net


def build_surrogate_set(oracle, inputs, name="surrogate-set"):
    """Label the query inputs through the oracle; the returned dataset is the
    attacker's entire training signal (hard labels, nothing else)."""
    labels = query_in_chunks(oracle, inputs)
    return Dataset(np.asarray(inputs, dtype=np.float64), labels,
                   oracle.metadata.num_classes, name)


def make_sampler(spec, nets, m=None):
    kind = FAMILY_SAMPLER_KIND[spec.family]
    return ParamSampler(kind, nets, m if m is not None else spec.m_passes)


def train_surrogate(spec, surrogate_data, probe_inputs, seed):
    """Train the family-specific surrogate on oracle-labelled data.

    After every epoch the current model is probed: mc_predict with the spec's
    forward-pass count on ``probe_inputs`` (inputs only; their labels are
    never seen here), recording the dataset-level prediction variance.
    Ensembles train their members in epoch lockstep with member-derived seeds
    so the curve reflects the ensemble as it would be deployed at that epoch.
    """
    x = surrogate_data.features
    y = surrogate_data.labels
    k = surrogate_data.num_classes
    probe_inputs = np.asarray(probe_inputs, dtype=np.float64)
    curve = VarianceCurve(spec.family, spec.trunk)
    epochs = spec.effective_epochs

    if spec.family in ENSEMBLE_FAMILIES:
        nets = [build_surrogate(spec, x.shape[1], k, seed, member=i)
                for i in range(spec.members)]
        decay = DE_WEIGHT_DECAY if spec.family == "deep_ensemble" else 0.0
        trainers = [NetworkTrainer(net, x, y, lr=spec.lr,
                                   seed=derive_seed(seed, MEMBER, i),
                                   weight_decay=decay)
                    for i, net in enumerate(nets)]
        sampler = make_sampler(spec, nets)
        for epoch in range(epochs):
            for trainer in trainers:
                trainer.run_epoch(epoch)
            result = mc_predict(sampler, probe_inputs,
                                derive_seed(seed, PROBE, epoch),
                                keep_samples=False)
            curve.values.append(prediction_variance(result))
        return sampler, curve

    net = build_surrogate(spec, x.shape[1], k, seed)
    sampler = make_sampler(spec, [net])
    trainer = NetworkTrainer(net, x, y, lr=spec.lr,
                             seed=derive_seed(seed, SURROGATE_TRAIN))
    for epoch in range(epochs):
        trainer.run_epoch(epoch)
        result = mc_predict(sampler, probe_inputs,
                            derive_seed(seed, PROBE, epoch),
                            keep_samples=False)
        curve.values.append(prediction_variance(result))
    return sampler, curve


def evaluate_fidelity(sampler, oracle, fidelity_inputs, rng):
    """Fraction of inputs where the surrogate's label matches the oracle's,
    both sides using the identical lowest-index argmax tie-break."""
    x = np.asarray(fidelity_inputs, dtype=np.float64)
    surrogate = predict_labels(sampler, x, rng)
    target = query_in_chunks(oracle, x)
    return float(np.mean(surrogate == target))


def surrogate_specs_for(family, trunks, m_passes=50, **kwargs):
    """The grid cells a family contributes: one per trunk for trunked
    families, a single mixed-architecture cell for the heterogeneous ensemble."""
    if family == "het_ensemble":
        return [SurrogateSpec(family, HET_TRUNK, m_passes, **kwargs)]
    return [SurrogateSpec(family, trunk, m_passes, **kwargs) for trunk in trunks]


def fidelity_rng(seed, size_index, family, trunk, m):
    key = (seed, FIDELITY, size_index, FAMILIES.index(family),
           hash_trunk(trunk), m)
    return derive_rng(*key)


def hash_trunk(trunk):
    names = TRUNK_NAMES + (HET_TRUNK,)
    return names.index(trunk)
