import numpy as np
import pytest

from clprobe.data import LabeledFeatureSet, SyntheticConfig, generate_synthetic_stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_stream():
    """20 classes, 16-d, 5 equal tasks, well separated."""
    cfg = SyntheticConfig(class_count=20, dimension=16, samples_per_class_train=12,
                          samples_per_class_test=8, cluster_spread=0.1, seed=7)
    return generate_synthetic_stream(cfg, 5)


@pytest.fixture
def tiny_set():
    features = np.arange(12, dtype=np.float64).reshape(3, 4)
    return LabeledFeatureSet(features, np.array([0, 0, 1]))
