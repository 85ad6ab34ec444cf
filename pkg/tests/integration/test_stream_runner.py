import dataclasses
import io
import json

import numpy as np
import pytest

from src.analysis.thresholds import Decision
from src.exceptions import InvalidInputError, TrainingError
from src.services.registry import RunRegistry
from src.services.stream_runner import StreamRunner, replay
from tests.conftest import blob


def _versioned_copy(bundle, recent, settings):
    return dataclasses.replace(bundle, version=bundle.version + 1, mu_e=1.0)


def _failing_updater(bundle, recent, settings):
    raise TrainingError("loss diverged")


def _crashing_updater(bundle, recent, settings):
    raise RuntimeError("worker crashed")


@pytest.fixture
def stream(trained_bundle):
    bundle, _ = trained_bundle
    rng = np.random.default_rng(7)
    return np.vstack([blob(rng, bundle.historical_count), blob(rng, 200), blob(rng, 100, center=2.5)])


@pytest.fixture
def timed_setup(trained_bundle):
    """Bundle whose monitor never accumulates mass, so updates fire only on ``t_max``."""
    bundle, settings = trained_bundle
    return dataclasses.replace(bundle, mu_e=1.0), settings.model_copy(update={"t_max": 40, "update_lag": 5})


def test_every_instance_gets_one_verdict(trained_bundle, stream):
    bundle, settings = trained_bundle
    verdicts = replay(bundle, stream, settings.model_copy(update={"enable_updates": False}))
    assert [v.index for v in verdicts] == list(range(bundle.historical_count, len(stream)))
    assert all(v.model_version == bundle.version for v in verdicts)
    assert all((v.decision is Decision.ANOMALY) == (v.score > v.threshold) for v in verdicts)


def test_swap_happens_at_a_fixed_index(timed_setup, stream):
    bundle, settings = timed_setup
    start = bundle.historical_count
    with StreamRunner(bundle, settings, updater=_versioned_copy) as runner:
        summary = runner.run(stream)
    versions = [v.model_version for v in runner.verdicts]
    changes = [start + i for i in range(1, len(versions)) if versions[i] != versions[i - 1]]
    first_swap = start + settings.t_max + 1 + settings.update_lag
    assert changes[:2] == [first_swap, first_swap + settings.t_max + 1 + settings.update_lag]
    assert summary.updates_succeeded == len(changes)
    assert summary.final_version == bundle.version + len(changes)


def test_failed_update_keeps_scoring_with_old_model(timed_setup, stream, tmp_path):
    bundle, settings = timed_setup
    registry = RunRegistry(f"sqlite:///{tmp_path / 'registry.db'}", run_id="failing")
    with StreamRunner(bundle, settings, registry=registry, updater=_failing_updater) as runner:
        summary = runner.run(stream)
    assert summary.instances == len(stream) - bundle.historical_count
    assert summary.updates_failed >= 1
    assert summary.updates_succeeded == 0
    assert all(v.model_version == bundle.version for v in runner.verdicts)
    history = registry.versions()
    assert history[0]["trigger_reason"] == "initial"
    assert {row["status"] for row in history[1:]} == {"failed"}
    assert "loss diverged" in history[1]["message"]


def test_unexpected_updater_crash_is_treated_as_a_failed_update(timed_setup, stream, tmp_path):
    bundle, settings = timed_setup
    registry = RunRegistry(f"sqlite:///{tmp_path / 'registry.db'}", run_id="crashing")
    with StreamRunner(bundle, settings, registry=registry, updater=_crashing_updater) as runner:
        summary = runner.run(stream)
    assert summary.instances == len(stream) - bundle.historical_count
    assert summary.updates_failed >= 1 and summary.updates_succeeded == 0
    assert all(v.model_version == bundle.version for v in runner.verdicts)
    failed = [row for row in registry.versions() if row["status"] == "failed"]
    assert "worker crashed" in failed[0]["message"]


def test_failed_update_backs_off_for_a_window(timed_setup, stream):
    bundle, settings = timed_setup
    with StreamRunner(bundle, settings, updater=_failing_updater) as runner:
        runner.run(stream[: bundle.historical_count + 60])
        swap_at = bundle.historical_count + settings.t_max + 1 + settings.update_lag
        assert runner.monitor.backoff_until == swap_at + settings.window_size
        assert runner.updates_failed == 1


def test_replays_write_identical_verdict_files(trained_bundle, stream):
    bundle, settings = trained_bundle
    settings = settings.model_copy(update={"t_max": 60})
    outputs = []
    for _ in range(2):
        sink = io.StringIO()
        with StreamRunner(bundle, settings, sink=sink, keep_verdicts=False) as runner:
            summary = runner.run(stream)
        outputs.append(sink.getvalue())
    assert summary.updates_succeeded >= 1
    assert outputs[0] == outputs[1]
    lines = outputs[0].splitlines()
    assert len(lines) == len(stream) - bundle.historical_count
    assert json.loads(lines[0])["index"] == bundle.historical_count


def test_resume_from_checkpoint_matches_uninterrupted_run(timed_setup, stream, tmp_path):
    bundle, settings = timed_setup
    settings = settings.model_copy(update={"checkpoint_every": 50})
    cut = 9 * settings.chunk_size

    with StreamRunner(bundle, settings, updater=_versioned_copy) as runner:
        runner.run(stream)
        expected = [v.to_record() for v in runner.verdicts]

    with StreamRunner(bundle, settings, checkpoint_dir=tmp_path / "ckpt", updater=_versioned_copy) as runner:
        runner.run(stream[:cut])
        head = [v.to_record() for v in runner.verdicts]
        assert runner.pending is None
    with StreamRunner.resume(tmp_path / "ckpt", settings, updater=_versioned_copy) as runner:
        assert runner.next_index == cut
        runner.run(stream)
        tail = [v.to_record() for v in runner.verdicts]

    assert head + tail == expected


def test_explicit_start_and_input_validation(trained_bundle, stream):
    bundle, settings = trained_bundle
    settings = settings.model_copy(update={"enable_updates": False})
    verdicts = replay(bundle, stream, settings, start=len(stream) - 5)
    assert [v.index for v in verdicts] == list(range(len(stream) - 5, len(stream)))
    with pytest.raises(InvalidInputError):
        replay(bundle, stream[0], settings)
