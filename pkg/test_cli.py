import json

import pytest

from core.sdp import read_sdpa
from main import build_parser, main


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({
        "seed": 2,
        "trials": 1,
        "methods": ["uniform", "target"],
        "m": 12,
        "n": 10,
        "test_size": 15,
        "lambdas": [0.001, 0.01],
        "folds": 3,
        "dm_iters": 50,
        "boundary_samples": 2,
        "output_dir": str(tmp_path / "results"),
    }))
    return path


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_synth_writes_csv_files(tmp_path, config_path, capsys):
    out = tmp_path / "synthetic"
    assert main(["--config", str(config_path), "synth", "--out-dir", str(out), "--s", "4"]) == 0
    for name in ("source.csv", "target.csv", "target_labeled.csv", "test.csv"):
        assert (out / name).exists()
    assert len((out / "source.csv").read_text().splitlines()) == 12
    summary = json.loads(capsys.readouterr().out)
    assert summary["s"] == 4


def test_run_writes_the_report(tmp_path, config_path, capsys):
    output = tmp_path / "report.json"
    assert main(["--config", str(config_path), "run", "--methods", "uniform", "--output", str(output)]) == 0
    report = json.loads(output.read_text())
    assert report["config"]["methods"] == ["uniform"]
    assert report["summary"]["uniform"]["count"] == 1
    assert "Report written to" in capsys.readouterr().out


def test_run_defaults_to_the_output_dir(tmp_path, config_path):
    assert main(["--config", str(config_path), "--seed", "7", "run"]) == 0
    report = json.loads((tmp_path / "results" / "report.json").read_text())
    assert report["config"]["seed"] == 7


def test_profile_writes_csv(tmp_path, config_path, capsys):
    output = tmp_path / "profile.csv"
    assert main(["--config", str(config_path), "profile", "--output", str(output), "--steps", "11"]) == 0
    lines = output.read_text().splitlines()
    assert lines[0] == "w,source_objective,target_objective,dm_objective,gdm_objective"
    assert len(lines) == 12
    assert set(json.loads(capsys.readouterr().out)["argmin"]) == {
        "source_objective", "target_objective", "dm_objective", "gdm_objective"}


def test_export_sdp(tmp_path, config_path, capsys):
    output = tmp_path / "problem.dat-s"
    assert main(["--config", str(config_path), "export-sdp", "--output", str(output), "--lam", "0.01"]) == 0
    assert output.read_text().startswith('"')
    assert json.loads(capsys.readouterr().out)["block_sizes"] == [13, 13, 11, -2]


def test_validate_r_without_labeled_target_fails(config_path, capsys):
    assert main(["--config", str(config_path), "validate-r", "--grid", "0.01,0.02"]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "EmptyValidation"


def test_missing_config_is_reported(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.json"), "synth", "--out-dir", str(tmp_path)]) == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"


def test_bad_environment_is_reported(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv("GDM_WORKERS", "many")
    assert main(["--config", str(config_path), "synth", "--out-dir", str(tmp_path)]) == 1


def test_export_sdp_round_trips(tmp_path, config_path, capsys):
    output = tmp_path / "problem.dat-s"
    assert main(["--config", str(config_path), "export-sdp", "--output", str(output)]) == 0
    printed = json.loads(capsys.readouterr().out)
    model = read_sdpa(output)
    assert list(model.block_sizes) == printed["block_sizes"]
    assert model.c.size == printed["variables"]


def test_export_sdp_needs_an_output_path(config_path):
    with pytest.raises(SystemExit):
        main(["--config", str(config_path), "export-sdp"])
