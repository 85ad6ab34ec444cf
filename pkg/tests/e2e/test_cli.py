import json

import pytest

from src.cli import main
from src.data.loaders.verdict_loader import VerdictLoader
from tests.conftest import TINY


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.conf"
    lines = [f"{key} = {value}" for key, value in TINY.items()]
    lines += ["h_r = 0.3", "t_max = 150", f"registry_url = sqlite:///{tmp_path / 'registry.db'}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _synth(tmp_path, name="stream.csv", dim=3):
    out = tmp_path / name
    args = ["--kind", "abrupt", "--n", "900", "--dim", str(dim), "--drift-at", "600", "--seed", "1", "-o", str(out)]
    code = main(["synth", *args])
    assert code == 0
    return out


def test_synth_train_run_eval(tmp_path, config, capsys):
    data = _synth(tmp_path)
    capsys.readouterr()

    assert main(["train", "--config", str(config), "--data", str(data), "-o", str(tmp_path / "bundle")]) == 0
    trained = json.loads(capsys.readouterr().out)
    assert trained["historical_count"] == 270 and trained["d"] == 3

    verdicts = tmp_path / "verdicts.ndjson"
    bundle = str(tmp_path / "bundle")
    assert main(["run", "--config", str(config), "--bundle", bundle, "--data", str(data), "-o", str(verdicts)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["instances"] == 630
    loaded = VerdictLoader().load(verdicts)
    assert [v.index for v in loaded] == list(range(270, 900))

    report_path = tmp_path / "report.json"
    eval_args = ["eval", "--config", str(config), "--verdicts", str(verdicts), "--data", str(data), "--window", "100"]
    assert main(eval_args + ["-o", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["synthetic"] is True
    assert report["drift_markers"] == [330]
    assert len(report["windows"]) == 7
    assert 0.0 <= report["global"]["fpr"] <= 1.0


def test_print_config_shows_overrides(config, capsys):
    argv = ["run", "--config", str(config), "--set", "tau=0.9", "--data", "x.csv", "-o", "y", "--print-config"]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "tau = 0.9" in out
    assert "window_size = 32" in out


def test_missing_config_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["train", "--data", str(tmp_path / "x.csv"), "-o", str(tmp_path / "b")])
    assert err.value.code == 2


def test_invalid_setting_fails_cleanly(config, tmp_path, capsys):
    code = main(["train", "--config", str(config), "--set", "mu_e=0.9", "--data", "x.csv", "-o", str(tmp_path / "b")])
    assert code == 1
    assert "mu_e" in capsys.readouterr().err


def test_dimension_mismatch_exits_with_failure(tmp_path, config, capsys):
    data = _synth(tmp_path)
    assert main(["train", "--config", str(config), "--data", str(data), "-o", str(tmp_path / "bundle")]) == 0
    other = _synth(tmp_path, "wide.csv", dim=5)
    capsys.readouterr()
    bundle = str(tmp_path / "bundle")
    code = main(["run", "--config", str(config), "--bundle", bundle, "--data", str(other), "-o", str(tmp_path / "v")])
    assert code == 1
    assert "dimension" in capsys.readouterr().err


def test_resume_continues_the_verdict_file(tmp_path, config, capsys):
    data = _synth(tmp_path)
    assert main(["train", "--config", str(config), "--data", str(data), "-o", str(tmp_path / "bundle")]) == 0
    verdicts, ckpt = tmp_path / "v.ndjson", tmp_path / "ckpt"
    common = ["--config", str(config), "--set", "checkpoint_every=100", "--data", str(data), "-o", str(verdicts)]
    assert main(["run", *common, "--bundle", str(tmp_path / "bundle"), "--checkpoint-dir", str(ckpt)]) == 0
    first = verdicts.read_text()
    assert main(["run", *common, "--checkpoint-dir", str(ckpt), "--resume"]) == 0
    assert verdicts.read_text() == first
