import os
from pathlib import Path

import pytest
import torch

from dmcond.data import dataset_spec, load_dataset, make_toy_dataset
from dmcond.errors import LoadError

torch.set_num_threads(max(1, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def toy_train():
    return make_toy_dataset(seed=0, per_class=64)


@pytest.fixture(scope="session")
def toy_test(toy_train):
    return make_toy_dataset(seed=0, per_class=32,
                            stats=(toy_train.channel_mean,
                                   toy_train.channel_std),
                            stream="test")


def mnist_available() -> bool:
    try:
        load_dataset(dataset_spec("mnist"), "test")
        return True
    except LoadError:
        return False


requires_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason="MNIST source files not present (set DMC_DATA_DIR)")

run_full = pytest.mark.skipif(
    os.environ.get("DMC_RUN_FULL", "") != "1",
    reason="full-protocol run; set DMC_RUN_FULL=1 (hours of compute)")
