import numpy as np
import pytest

from impactsynth import StftConfig

DEFAULT = StftConfig()
SMALL = StftConfig(sample_rate=8000, window_size=512, hop_size=128)


@pytest.fixture
def default_config():
    return DEFAULT


@pytest.fixture
def small_config():
    return SMALL


@pytest.fixture
def rng():
    return np.random.default_rng(0)
