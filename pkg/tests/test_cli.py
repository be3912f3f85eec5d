import json

import pytest
import yaml

from nerfinv.cli import main
from test_experiments import TINY


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "spec.yaml"
    path.write_text(yaml.safe_dump(json.loads(json.dumps(TINY))))
    return path


def test_invert(config, tmp_path, capsys):
    assert main(["invert", "--config", str(config), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert (tmp_path / "o" / "summary.csv").exists()
    assert "artifacts in" in capsys.readouterr().out


def test_sweep_reports_properties(config, tmp_path, capsys):
    code = main(["sweep", "inpaint_sweep", "--config", str(config), "--out", str(tmp_path / "s"), "--arm", "csgm"])
    out = capsys.readouterr().out
    assert ("PASS" in out or "FAIL" in out) and code in (0, 1)
    assert (tmp_path / "s" / "arms" / "csgm.csv").exists()


def test_refs_build_then_invert_from_disk(config, tmp_path):
    assert main(["refs", "build", "--config", str(config), "--out", str(tmp_path / "refs")]) == 0
    d = yaml.safe_load(config.read_text())
    d["references"]["path"] = str(tmp_path / "refs")
    config.write_text(yaml.safe_dump(d))
    assert main(["invert", "--config", str(config), "--out", str(tmp_path / "o")]) == 0


def test_curate(config, tmp_path):
    d = yaml.safe_load(config.read_text())
    d["curation_count"] = 2
    config.write_text(yaml.safe_dump(d))
    assert main(["curate", "--config", str(config), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "curation.csv").exists()


def test_render(config, tmp_path, capsys):
    assert main(["render", "--config", str(config), "--out", str(tmp_path / "r")]) == 0
    assert len(list((tmp_path / "r").glob("*.png"))) == 4


def test_check(capsys):
    assert main(["check"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("noise_std: -1.0\n")
    assert main(["sweep", "cs_sweep", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_failed_run_exit_code(config, tmp_path):
    assert main(["invert", "--config", str(config), "--out", str(tmp_path / "x"), "--arm", "ours@9"]) == 1
