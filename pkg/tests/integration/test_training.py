import numpy as np
import pytest

from src.config.settings import Settings
from src.data.streams import LabeledStream, split_historical
from src.exceptions import TrainingError
from src.services.bundle import VACUOUS_UNCERTAINTY
from src.services.scoring import assess
from src.services.training import component_rngs, fit_bundle, train
from tests.conftest import TINY, blob


def _same_parameters(a, b):
    arrays_a = a.scd.parameters() + a.iec.net.parameters() + a.dsd.parameters()
    arrays_b = b.scd.parameters() + b.iec.net.parameters() + b.dsd.parameters()
    return all(np.array_equal(x, y) for x, y in zip(arrays_a, arrays_b))


def test_training_uses_the_historical_prefix(rng):
    stream = LabeledStream(blob(rng, 1000), labels=np.zeros(1000))
    historical, online = split_historical(stream, 0.2)
    bundle = train(historical.instances, Settings(**TINY))
    assert bundle.historical_count == 200
    assert bundle.version == 1
    assert bundle.extras["training_instances"] == 200
    assert online.n == 800


def test_training_is_deterministic_under_seed(rng):
    data = blob(rng, 300)
    a = train(data, Settings(**TINY, seed=4))
    b = train(data, Settings(**TINY, seed=4))
    c = train(data, Settings(**TINY, seed=5))
    assert _same_parameters(a, b)
    assert a.bootstrap_threshold == b.bootstrap_threshold
    assert not _same_parameters(a, c)


def test_component_generators_are_independent():
    first = [g.random() for g in component_rngs(0, 1)]
    assert len(set(first)) == 4
    assert first == [g.random() for g in component_rngs(0, 1)]
    assert first != [g.random() for g in component_rngs(0, 2)]


def test_calibration_values(trained_bundle):
    bundle, settings = trained_bundle
    assert 0.0 <= bundle.mu_t <= VACUOUS_UNCERTAINTY
    assert bundle.pivot_init > 0.0
    assert bundle.bootstrap_threshold > 0.0
    assert bundle.mu_e == settings.mu_e
    assert bundle.mu_p > 0.0


def test_training_data_mostly_falls_below_bootstrap(trained_bundle):
    bundle, settings = trained_bundle
    data = blob(np.random.default_rng(99), 400)
    result = assess(bundle, data, settings)
    assert np.mean(result.recon_error <= bundle.bootstrap_threshold * np.exp(1.0)) > 0.95


def test_coverage_and_noise_options(rng):
    data = blob(rng, 300)
    bundle = fit_bundle(data, Settings(**TINY, coverage=0.5, noise_std=0.1))
    assert bundle.extras["training_instances"] == 150


def test_prior_labels_are_accepted(rng):
    data = np.vstack([blob(rng, 280), blob(rng, 20, center=6.0)])
    labels = np.r_[np.zeros(280, dtype=int), np.ones(20, dtype=int)]
    bundle = train(data, Settings(**TINY, prior_label_fraction=0.5), labels=labels)
    assert bundle.version == 1


def test_retrain_and_finetune_versions(trained_bundle, rng):
    bundle, settings = trained_bundle
    recent = blob(rng, 100, center=1.0)
    tuned = fit_bundle(recent, settings, base=bundle, version=2)
    assert tuned.version == 2
    assert tuned.standardizer is bundle.standardizer
    fresh = fit_bundle(recent, settings, version=2, historical_count=bundle.historical_count)
    assert fresh.standardizer is not bundle.standardizer
    assert fresh.historical_count == bundle.historical_count


def test_training_rejects_empty_input():
    with pytest.raises(TrainingError):
        train(np.zeros((0, 3)), Settings(**TINY))
