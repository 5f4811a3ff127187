import json

import pytest

from preintvio.cli import EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main


def test_run_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(tiny_config), "--models", "m1,discrete", "--runs", "1", "--out", str(out)])
    assert code == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["config.json", "discrete.csv", "m1.csv", "summary.json"]
    assert set(json.loads((out / "summary.json").read_text())) == {"m1", "discrete"}
    assert "pos RMSE" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--config", "missing.json", "--out", "x"],
        ["run", "--config", "{cfg}", "--models", "m7", "--out", "x"],
        ["run", "--config", "{cfg}", "--runs", "0", "--out", "x"],
        ["run", "--config", "{cfg}", "--mode", "fused", "--out", "x"],
        ["run", "--config", "{cfg}"],
        ["oracle", "--tol-scale", "0"],
        ["frobnicate"],
    ],
)
def test_configuration_errors_exit_1(argv, tiny_config, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    argv = [a.replace("{cfg}", str(tiny_config)) for a in argv]
    assert main(argv) == EXIT_CONFIG
    assert not (tmp_path / "x").exists()


def test_malformed_config_exit_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"trajectory": {"radius": -1}}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_oracle_passes(capsys):
    assert main(["oracle", "--configs", "5", "--rk4-draws", "20"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_oracle_tightened_tolerances_fail(capsys):
    assert main(["oracle", "--configs", "5", "--rk4-draws", "20", "--tol-scale", "1e-4"]) == EXIT_ORACLE
    assert "[FAIL]" in capsys.readouterr().out
