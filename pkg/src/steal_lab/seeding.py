"""Deterministic RNG derivation.

Every random decision in the package flows from an integer root seed through
``derive_rng``/``derive_seed`` so that whole pipelines replay bit-for-bit.
Branch tags keep unrelated consumers (data generation, weight init, dropout
masks, probes, ...) on statistically independent streams.
"""

import numpy as np

# Branch tags. Values are arbitrary but frozen: changing them changes every
# derived stream and therefore every reported number.
DATA_TRAIN = 11
DATA_TEST = 12
SPLIT = 13
TARGET_INIT = 21
TARGET_TRAIN = 22
SURROGATE_INIT = 31
SURROGATE_TRAIN = 32
MEMBER = 33
PROBE = 41
PREDICT = 42
FIDELITY = 43


def derive_rng(root, *branch):
    """Return a fresh Generator for the (root, *branch) derivation path."""
    return np.random.default_rng(_entropy(root, branch))


def derive_seed(root, *branch):
    """Collapse a derivation path to a plain int seed (for APIs that take one)."""
    return int(np.random.SeedSequence(_entropy(root, branch)).generate_state(1)[0])


def _entropy(root, branch):
    return [int(root)] + [int(b) for b in branch]
