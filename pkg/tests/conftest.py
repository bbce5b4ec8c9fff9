"""Shared fixtures: synthetic data and a small trained model."""

import pytest

from pufbnn.data import synthetic_digits
from pufbnn.puf import PufDevice
from pufbnn.train import TrainConfig, finalize, train_ste


@pytest.fixture(scope="session")
def small_sets():
    return synthetic_digits(300, seed=100), synthetic_digits(100, seed=101)


@pytest.fixture(scope="session")
def small_model(small_sets):
    """Desk-scale 784-128-128-128-10 model trained on the synthetic corpus."""
    train_set, test_set = small_sets
    config = TrainConfig(layer_sizes=(784, 128, 128, 128, 10), epochs=12, seed=0)
    shadow, history = train_ste(config, train_set, test_set)
    model = finalize(shadow)
    assert max(history) >= 0.85, f"fixture model too weak: {history}"
    return model


@pytest.fixture(scope="session")
def puf_device():
    return PufDevice.generate(seed=1234)
