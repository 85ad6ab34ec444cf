"""Statistical end-to-end checks on synthetic streams. Run with ``pytest -m slow``."""
import numpy as np
import pytest

from src.analysis.metrics.evaluation import evaluate
from src.analysis.thresholds import Decision
from src.config.settings import Settings
from src.data.generators.drift_stream import ConceptSpec, DriftSpec, synth_stream
from src.data.streams import split_historical
from src.services.stream_runner import StreamRunner, replay
from src.services.training import train

pytestmark = pytest.mark.slow

DRIFT_AT = 10_000


@pytest.fixture(scope="module")
def drift_stream():
    spec = DriftSpec(
        kind="abrupt",
        concepts=[ConceptSpec(mean=[0.0] * 4), ConceptSpec(mean=[3.0] * 4)],
        n=20_000,
        anomaly_rate=0.01,
        drift_positions=[DRIFT_AT],
    )
    return synth_stream(spec, seed=11)


@pytest.fixture(scope="module")
def drift_bundle(drift_stream):
    # off-manifold regulariser on: keeps the controller uncertain on unseen regions
    settings = Settings(seed=3, iec_ood_weight=0.5)
    historical, _ = split_historical(drift_stream, settings.h_r)
    return train(historical.instances, settings), settings


def test_flagged_fraction_on_stationary_stream_is_controlled():
    rng = np.random.default_rng(21)
    settings = Settings(seed=1, calibration_lambda=0.0, tau=0.95, threshold_mode="quantile", enable_updates=False)
    data = rng.standard_normal((12_000, 4))
    bundle = train(data[:2_000], settings)
    verdicts = replay(bundle, data, settings)
    assert len(verdicts) == 10_000
    flagged = np.mean([v.decision is Decision.ANOMALY for v in verdicts])
    assert flagged <= 0.07


def test_controller_uncertainty_rises_at_drift_onset(drift_stream, drift_bundle):
    bundle, settings = drift_bundle
    frozen = settings.model_copy(update={"enable_updates": False})
    verdicts = replay(bundle, drift_stream.instances[: DRIFT_AT + 200], frozen, start=DRIFT_AT - 200)
    uncertainty = np.array([v.uncertainty for v in verdicts])
    assert uncertainty[200:].mean() >= 2.0 * uncertainty[:200].mean()


def test_full_pipeline_beats_frozen_static_detector_after_drift(drift_stream, drift_bundle):
    bundle, settings = drift_bundle
    labels = drift_stream.labels[bundle.historical_count :]
    with StreamRunner(bundle, settings) as runner:
        runner.run(drift_stream.instances)
        full = runner.verdicts
    ablation = settings.model_copy(update={"detector_mode": "static_only", "use_iec": False, "enable_updates": False})
    frozen = replay(bundle, drift_stream.instances, ablation)

    report = evaluate(full, labels, window=500, baseline=frozen)
    assert report.global_.aucroc >= 0.85
    assert report.baseline.delta >= 0.05
    assert report.model_version_changes


def test_inference_throughput():
    rng = np.random.default_rng(5)
    settings = Settings(scd_epochs=5, iec_epochs=5, dsd_epochs=5, enable_updates=False)
    data = rng.standard_normal((22_000, 20))
    bundle = train(data[:2_000], settings)
    with StreamRunner(bundle, settings, keep_verdicts=False) as runner:
        summary = runner.run(data)
    assert summary.instances == 20_000
    assert summary.throughput >= 10_000
