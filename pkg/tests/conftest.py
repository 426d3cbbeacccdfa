import numpy as np
import pytest

from viapkit import render, train


@pytest.fixture(scope="session")
def default_dataset():
    return render.generate_dataset(seed=7)


@pytest.fixture(scope="session")
def victim_run(default_dataset):
    ds = default_dataset
    tr = ds.indices("train")
    te = ds.indices("test")
    return train.train(
        train.init_params(0),
        ds.images[tr], ds.labels[tr],
        train.TrainConfig(),
        val=(ds.images[te], ds.labels[te]),
    )


@pytest.fixture(scope="session")
def victim(victim_run):
    return victim_run[0]


@pytest.fixture(scope="session")
def tiny_dataset():
    # 4 classes x 1 object x 4 views: enough structure for sweep plumbing
    # tests without paying for the full dataset.
    return render.generate_dataset(
        objects_per_class=1, views_per_object=4, seed=3
    )


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
