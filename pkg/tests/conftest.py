import numpy as np
import pytest

from mela.taskgen import make_meta_distribution, sample_meta_training_set


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def separable_md():
    return make_meta_distribution(C=10, d=16, k=5, n=5, m=15, noise_std=1.0, separation=6.0, seed=0)


@pytest.fixture
def planted_tasks():
    md = make_meta_distribution(C=20, d=32, k=5, n=5, m=15, noise_std=1.0, separation=6.0, seed=3)
    return md, sample_meta_training_set(md, 200, rng=3)
