import numpy as np
import pytest

from thoughtflow.data import benchmark_spec, generate_synthetic
from thoughtflow.model import build_bundle
from thoughtflow.training import TrainConfig, train_base, train_correction


from thoughtflow.experiments import BENCHMARK_ARCH


@pytest.fixture(scope="session")
def small_dataset():
    spec = benchmark_spec(seed=7)
    spec.sizes = {"train": 800, "val": 200, "test": 200}
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def trained_bundle(small_dataset):
    bundle = train_base(small_dataset, TrainConfig(epochs=20, seed=7), **BENCHMARK_ARCH)
    return train_correction(bundle, small_dataset, TrainConfig(epochs=10, seed=7))


@pytest.fixture()
def zero_head_bundle():
    """Correction head all zero: score is identically 0.5, gradient 0."""
    bundle = build_bundle(n_inputs=8, n_features=16, n_classes=3, seed=3)
    bundle.correction.head.weights[:] = 0.0
    bundle.correction.head.bias[:] = 0.0
    bundle.provenance.update(trained_base=True, trained_correction=True)
    return bundle
