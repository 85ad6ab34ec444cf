"""Shared fixtures: seeded generators, small settings and a trained bundle."""
import numpy as np
import pytest

from src.config.settings import Settings
from src.services.training import train

TINY = dict(
    scd_epochs=30,
    iec_epochs=20,
    dsd_epochs=20,
    update_epochs=3,
    batch_size=32,
    iec_hidden=8,
    hyper_hidden=8,
    embedding_dim=4,
    window_size=32,
    warmup_min=8,
    chunk_size=64,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_settings():
    return Settings(**TINY)


def blob(rng, n, dim=4, center=0.0, scale=1.0):
    return center + scale * rng.standard_normal((n, dim))


@pytest.fixture(scope="session")
def trained_bundle():
    settings = Settings(**TINY)
    data = blob(np.random.default_rng(99), 400)
    return train(data, settings), settings
