"""Shared fixtures.

``toy_run`` is the 10-seed blobs stealing grid used by the acceptance
criteria (and anything else that wants medians over real runs); it executes
once per session.
"""

import numpy as np
import pytest

from steal_lab.config import ExperimentConfig
from steal_lab.experiment import run_experiment

ACCEPTANCE_SEEDS = tuple(range(10))


@pytest.fixture(scope="session")
def toy_config(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_run")
    return ExperimentConfig(dataset="blobs", out=str(out),
                            seeds=ACCEPTANCE_SEEDS)


@pytest.fixture(scope="session")
def toy_run(toy_config):
    import time
    started = time.perf_counter()
    result = run_experiment(toy_config)
    result.wall_seconds = time.perf_counter() - started
    return result


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
