from dataclasses import replace

import numpy as np
import pytest

from egolane import harness
from egolane.sim import ScenarioConfig, generate_batch


def noise_free(**over) -> ScenarioConfig:
    base = ScenarioConfig(point_noise_sigma=0.0, type_confusion_prob=0.0, gnss_bias_range=0.0,
                          gnss_noise_sigma=0.0, missing_prob=0.0, speed_noise_sigma=0.0,
                          yaw_rate_noise_sigma=0.0)
    return replace(base, **over)


@pytest.fixture(scope="session")
def short_dataset():
    """60 labeled 4-second drives."""
    seqs = generate_batch(ScenarioConfig(duration=4.0), 60, seed=11)
    return harness.build_dataset(seqs)


@pytest.fixture(scope="session")
def short_model(short_dataset):
    valid = [ls for ls in short_dataset if ls.valid]
    return harness.train_model(valid[:30], rounds=30)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
