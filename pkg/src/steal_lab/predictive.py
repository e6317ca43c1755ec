"""Monte Carlo predictive averaging over parameter draws.

Every surrogate family funnels through the same approximation: draw model
parameters M times, softmax each draw's logits, and average the probabilities
arithmetically. Ensembles use each member exactly once (M == member count);
stochastic models resample their noise per pass.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .seeding import PREDICT, derive_rng
from .tensor import softmax_rows

SAMPLER_KINDS = ("deterministic", "mc_dropout", "concrete", "variational",
                 "stochastic", "deep_ensemble", "heterogeneous_ensemble")
ENSEMBLE_KINDS = ("deep_ensemble", "heterogeneous_ensemble")

# Stochastic passes are evaluated in fixed-size stacks; the constant is part
# of the numeric contract only through memory use, since per-sample results
# are chunk-invariant (verified by tests against a per-sample reference).
CHUNK = 8192


@dataclass
class ParamSampler:
    """One parameter-draw source: a stochastic net or a list of ensemble members."""

    kind: str
    members: list
    m: int = 1

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if not self.members:
            raise ConfigError("sampler has no member networks")
        if self.kind in ENSEMBLE_KINDS:
            # Each member is used exactly once per prediction.
            self.m = len(self.members)
            for net in self.members:
                if net.is_stochastic:
                    raise ConfigError("ensemble members must be deterministic")
        else:
            if len(self.members) != 1:
                raise ConfigError(f"{self.kind} sampler takes a single network")
            if self.m < 1:
                raise ConfigError("forward-pass count must be >= 1")
            if self.kind == "deterministic" and self.members[0].is_stochastic:
                raise ConfigError("deterministic sampler wraps a stochastic network")

    @property
    def network(self):
        return self.members[0]

    def with_m(self, m):
        """Same models, different forward-pass count (no-op for ensembles)."""
        if self.kind in ENSEMBLE_KINDS:
            return self
        return ParamSampler(self.kind, self.members, m)


@dataclass
class PredictiveResult:
    """Output of mc_predict.

    mean_probs is the arithmetic mean of the per-sample softmax outputs;
    per_point_variance is the per-class population variance across samples,
    averaged over classes, one value per input row. sample_probs is None when
    sample storage was disabled for very large M.
    """

    mean_probs: np.ndarray
    sample_probs: np.ndarray | None
    per_point_variance: np.ndarray


def _root_seed(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63))
    raise ConfigError("rng must be an int seed or a numpy Generator")


def mc_predict(sampler, x, rng, *, keep_samples=True):
    """Run the sampler's M parameter draws on x and average the probabilities.

    ``rng`` is an int root seed or a Generator (a root seed is then drawn from
    it). Sample i's noise for layer j comes from a per-layer stream derived
    from (root, PREDICT, j); row i of that stream is exactly what sequential
    pass i would draw, so results do not depend on chunking and any sample is
    reproducible in isolation.
    """
    x = np.asarray(x, dtype=np.float64)
    if sampler.kind == "deterministic":
        probs = sampler.network.predict_probs(x)
        samples = np.broadcast_to(probs, (sampler.m,) + probs.shape)
        variance = np.zeros(x.shape[0])
        return PredictiveResult(probs, samples if keep_samples else None, variance)

    if sampler.kind in ENSEMBLE_KINDS:
        samples = np.stack([net.predict_probs(x) for net in sampler.members])
        mean = samples.mean(axis=0)
        variance = ((samples - mean) ** 2).mean(axis=0).mean(axis=1)
        return PredictiveResult(mean, samples if keep_samples else None, variance)

    net = sampler.network
    root = _root_seed(rng)
    streams = [derive_rng(root, PREDICT, j) for j in range(len(net.layers))]
    m = sampler.m
    n, k = x.shape[0], net.num_classes
    prob_sum = np.zeros((n, k))
    prob_sqsum = np.zeros((n, k))
    stored = [] if keep_samples else None
    done = 0
    while done < m:
        size = min(CHUNK, m - done)
        noise = net.sample_noise(streams, size)
        logits = net.forward_multi(x, noise)
        if logits.ndim == 2:
            # No stochastic layer consumed noise: all samples coincide.
            logits = np.broadcast_to(logits, (size,) + logits.shape)
        probs = softmax_rows(logits)
        prob_sum += probs.sum(axis=0)
        prob_sqsum += (probs * probs).sum(axis=0)
        if stored is not None:
            stored.append(probs)
        done += size
    mean = prob_sum / m
    variance = np.maximum(prob_sqsum / m - mean * mean, 0.0).mean(axis=1)
    samples = np.concatenate(stored) if stored is not None else None
    return PredictiveResult(mean, samples, variance)


def prediction_variance(result):
    """Dataset-level diversity scalar: mean over points of the per-point
    per-class population variance across the M draws. Zero when all draws
    agree; zero by definition for M == 1.
    """
    return float(result.per_point_variance.mean())


def predict_labels(sampler, x, rng=None):
    """Argmax class of the Monte Carlo mean probabilities, lowest index on ties."""
    if rng is None and sampler.kind not in ("deterministic",) + ENSEMBLE_KINDS:
        raise DomainError("stochastic samplers need an rng for predict_labels")
    result = mc_predict(sampler, x, rng if rng is not None else 0,
                        keep_samples=False)
    return np.argmax(result.mean_probs, axis=1)
