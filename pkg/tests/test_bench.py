import csv
import json

import numpy as np
import pytest

from preintvio.bench import CSV_COLUMNS, aggregate, run_monte_carlo, synthesize_run, write_report
from preintvio.config import ConfigError, ScenarioConfig
from preintvio.simulator import ODOMETRY_SEGMENTS


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_outputs_are_byte_identical(tiny_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_report(run_monte_carlo(tiny_config), a)
    write_report(run_monte_carlo(tiny_config), b)
    assert _files(a) == _files(b)
    assert sorted(_files(a)) == ["config.json", "discrete.csv", "m1.csv", "m2.csv", "summary.json"]


def test_worker_count_does_not_change_results(tiny_config):
    a = run_monte_carlo(tiny_config, models=["m1"])
    b = run_monte_carlo(tiny_config, models=["m1"], workers=2)
    assert a.summary() == b.summary()


def test_seed_changes_results(tiny_config):
    a = run_monte_carlo(tiny_config, models=["m1"], runs=1)
    b = run_monte_carlo(tiny_config, models=["m1"], runs=1, seed=1)
    assert a.summary()["m1"]["pos_rmse_m"] != b.summary()["m1"]["pos_rmse_m"]


def test_models_share_measurements():
    cfg = ScenarioConfig.load("configs/smoke.json")
    d1, d2 = synthesize_run(cfg, 1), synthesize_run(cfg, 1)
    assert d1.imu.am.tobytes() == d2.imu.am.tobytes()
    assert np.array_equal(d1.x0.p, d2.x0.p)
    assert not np.array_equal(synthesize_run(cfg, 0).imu.am, d1.imu.am)


def test_summary_matches_csv_rows(tiny_config, tmp_path):
    report = run_monte_carlo(tiny_config)
    write_report(report, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert json.loads((tmp_path / "config.json").read_text()) == report.config.to_dict()
    for model in ("m1", "m2", "discrete"):
        entry = summary[model]
        assert set(entry) == {"pos_rmse_m", "pos_rmse_std_m", "ori_rmse_deg", "odo_err_m", "nees_mean", "diverged_runs", "runs"}
        assert set(entry["odo_err_m"]) == {str(int(L)) for L in ODOMETRY_SEGMENTS}
        rows = list(csv.DictReader(open(tmp_path / f"{model}.csv")))
        assert list(rows[0]) == CSV_COLUMNS
        per_run = {}
        for r in rows:
            per_run.setdefault(int(r["run"]), []).append(float(r["pos_err_m"]))
        rmse = [np.sqrt(np.mean(np.square(v))) for _, v in sorted(per_run.items())]
        assert entry["pos_rmse_m"] == pytest.approx(np.mean(rmse), rel=1e-12)
        assert entry["pos_rmse_std_m"] == pytest.approx(np.std(rmse), rel=1e-9)
        assert entry["nees_mean"] == pytest.approx(np.mean([float(r["nees"]) for r in rows]), rel=1e-12)
        assert entry["diverged_runs"] == 0


def test_no_cov_reports_null_nees(tiny_config):
    s = run_monte_carlo(tiny_config, models=["m2"], runs=1, want_cov=False).summary()
    assert s["m2"]["nees_mean"] is None


def test_aggregate_excludes_diverged_runs(tiny_config):
    report = run_monte_carlo(tiny_config, models=["m1"])
    rs = report.results["m1"]
    rs[1].diverged = True
    entry = aggregate(rs)
    assert entry["diverged_runs"] == 1
    assert entry["pos_rmse_m"] == pytest.approx(rs[0].pos_rmse)
    assert [r["diverged"] for r in entry["runs"]] == [False, True]


@pytest.mark.parametrize(
    "overrides",
    [{"models": ["m9"]}, {"runs": 0}, {"mode": "fused"}, {"workers": 0}],
)
def test_invalid_overrides(tiny_config, overrides):
    with pytest.raises(ConfigError):
        run_monte_carlo(tiny_config, **overrides)
