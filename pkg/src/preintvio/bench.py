"""Monte-Carlo comparison of the preintegration models.

For every run a single set of measurements is synthesized (IMU samples,
stereo feature tracks or relative poses, and the perturbed initial state) and
fed unchanged to every requested model.  Randomness is derived from
``SeedSequence([seed, run])`` so any run can be reproduced on its own.

Outputs written by :func:`write_report` contain no timing information, so
repeated invocations with the same configuration are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path

import numpy as np

from .config import ConfigError, ImuNoiseSpec, ScenarioConfig
from .estimator import SlidingWindowEstimator
from .factors import RelativePoseMeas
from .manifold import ImuState
from .simulator import (
    EXACT_RELPOSE_COV,
    ODOMETRY_SEGMENTS,
    AnalyticTrajectory,
    compute_metrics,
    stereo_calibs,
    synthesize_features,
    synthesize_imu,
    synthesize_relative_poses,
    truth_states,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ["run", "step", "t", "pos_err_m", "ori_err_deg", "nees"]


@dataclass
class RunData:
    """Measurements shared by all models within one run."""

    run: int
    times: np.ndarray
    imu: object
    frames: list | None
    relposes: list | None
    truth: list
    x0: ImuState
    P0: np.ndarray


@dataclass
class RunResult:
    model: str
    run: int
    t: np.ndarray
    pos_err: np.ndarray
    ori_err_deg: np.ndarray
    nees: np.ndarray
    pos_rmse: float
    ori_rmse: float
    odo_err: dict
    diverged: bool = False
    reason: str = ""


@dataclass
class BenchmarkReport:
    """Per-model, per-run results plus aggregates.

    ``timings`` holds wall-clock seconds per stage; it is informational only
    and never written to disk.
    """

    config: ScenarioConfig
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def summary(self):
        return {m: aggregate(rs) for m, rs in self.results.items()}


# ---------------------------------------------------------------------------
# synthesis


def run_streams(seed, run):
    """Independent generators for IMU noise, pixel noise, relative poses and the initial state."""
    ss = np.random.SeedSequence([int(seed), int(run)])
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _noise_is_zero(noise: ImuNoiseSpec):
    return not np.any(noise.qc)


def synthesize_run(cfg: ScenarioConfig, run: int) -> RunData:
    """Generate the measurement streams and initial state of one run."""
    rng_imu, rng_pix, rng_rel, rng_init = run_streams(cfg.seed, run)
    traj = AnalyticTrajectory(cfg.trajectory, cfg.imu.gravity)
    noise = cfg.imu.noise
    imu = synthesize_imu(traj, cfg.imu.rate, noise, None if _noise_is_zero(noise) else rng_imu)
    cam = cfg.camera
    frames = relposes = None
    if cfg.mode == "tightly-coupled":
        frames, _ = synthesize_features(traj, cam, rng_pix if cam.pixel_sigma > 0 else None, stereo_calibs(cam.baseline))
        times = np.array([f.t for f in frames])
    else:
        n = int(math.floor(cfg.trajectory.duration * cam.rate + 1e-9))
        times = np.arange(n + 1) / cam.rate
        cov = np.diag([cam.rel_pose_sigma_theta**2] * 3 + [cam.rel_pose_sigma_p**2] * 3)
        relposes = synthesize_relative_poses(traj, list(zip(times[:-1], times[1:])), cov, rng_rel)
    truth = truth_states(traj, times, imu)
    est = cfg.estimator
    P0 = np.diag(est.init_sigmas**2)
    x0 = truth[0].copy()
    if est.inject_init_noise:
        x0 = x0.boxplus(est.init_sigmas * rng_init.standard_normal(15))
    return RunData(run, times, imu, frames, relposes, truth, x0, P0)


# ---------------------------------------------------------------------------
# estimation


class EstimatorDefaults:
    """Measurement sigmas the estimator falls back on for noiseless inputs."""

    pixel_sigma = 1.0
    rel_sigma_theta = 1e-3
    rel_sigma_p = 5e-3


def estimator_noise(noise: ImuNoiseSpec):
    """Noise model assumed by the estimator (defaults when the simulation is noiseless)."""
    return ImuNoiseSpec() if _noise_is_zero(noise) else noise


def _relpose_for_estimator(meas):
    """Relative-pose measurement with a usable covariance."""
    if not np.array_equal(meas.cov, EXACT_RELPOSE_COV):
        return meas
    d = EstimatorDefaults
    cov = np.diag([d.rel_sigma_theta**2] * 3 + [d.rel_sigma_p**2] * 3)
    return RelativePoseMeas(meas.q, meas.p, cov)


def run_model(cfg: ScenarioConfig, data: RunData, model: str, want_cov=True) -> RunResult:
    """Run the sliding-window estimator for one model on one run."""
    cam = cfg.camera
    sigma_px = cam.pixel_sigma if cam.pixel_sigma > 0 else EstimatorDefaults.pixel_sigma
    est = SlidingWindowEstimator(
        model,
        estimator_noise(cfg.imu.noise),
        stereo_calibs(cam.baseline),
        sigma_px / cam.focal,
        cfg.estimator,
        mode=cfg.mode,
        gravity=cfg.imu.gravity,
    )
    times, imu = data.times, data.imu
    est.initialize(times[0], data.x0, data.P0)
    states, covs = [], []
    diverged, reason = False, ""
    limit = cfg.estimator.divergence_m
    for j in range(1, len(times)):
        i0, i1 = imu.index(times[j - 1]), imu.index(times[j])
        sl = slice(i0, i1 + 1)
        try:
            rec = est.add_frame(
                times[j],
                imu.t[sl],
                imu.wm[sl],
                imu.am[sl],
                features=None if data.frames is None else data.frames[j],
                relpose=None if data.relposes is None else _relpose_for_estimator(data.relposes[j - 1]),
                want_cov=want_cov,
            )
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            diverged, reason = True, f"solver failure at step {j}: {exc}"
            break
        err = float(np.linalg.norm(rec.state.p - data.truth[j].p))
        if not np.isfinite(err) or err > limit:
            diverged, reason = True, f"position error {err:.3g} m at step {j}"
            break
        states.append(rec.state)
        covs.append(rec.cov)
    if diverged:
        log.warning("%s run %d diverged: %s", model, data.run, reason)
    n = len(states)
    if n == 0:
        nan = np.zeros(0)
        return RunResult(model, data.run, nan, nan, nan, nan, math.nan, math.nan, {}, True, reason or "no frames")
    m = compute_metrics(states, data.truth[1 : n + 1], ODOMETRY_SEGMENTS, covs if want_cov else None)
    nees = m.nees if m.nees is not None else np.full(n, math.nan)
    return RunResult(
        model, data.run, np.asarray(times[1 : n + 1]), m.pos_err, m.ori_err_deg, nees,
        m.pos_rmse, m.ori_rmse, m.odo_err, diverged, reason,
    )


# ---------------------------------------------------------------------------
# aggregation and output


def aggregate(results):
    """Summary entry for one model; diverged runs only count toward ``diverged_runs``."""
    ok = [r for r in results if not r.diverged]

    def mean(vals):
        vals = [v for v in vals if v is not None and np.isfinite(v)]
        return float(np.mean(vals)) if vals else None

    def std(vals):
        vals = [v for v in vals if v is not None and np.isfinite(v)]
        return float(np.std(vals)) if vals else None

    nees = np.concatenate([r.nees for r in ok]) if ok else np.zeros(0)
    nees = nees[np.isfinite(nees)]
    return {
        "pos_rmse_m": mean([r.pos_rmse for r in ok]),
        "pos_rmse_std_m": std([r.pos_rmse for r in ok]),
        "ori_rmse_deg": mean([r.ori_rmse for r in ok]),
        "odo_err_m": {_seg_key(L): mean([r.odo_err.get(float(L)) for r in ok]) for L in ODOMETRY_SEGMENTS},
        "nees_mean": float(np.mean(nees)) if nees.size else None,
        "diverged_runs": len(results) - len(ok),
        "runs": [
            {
                "run": r.run,
                "pos_rmse_m": _num(r.pos_rmse),
                "ori_rmse_deg": _num(r.ori_rmse),
                "diverged": r.diverged,
            }
            for r in results
        ],
    }


def _seg_key(L):
    return str(int(L)) if float(L).is_integer() else str(L)


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _fmt(x):
    return "nan" if not np.isfinite(x) else repr(float(x))


def results_csv(results):
    """CSV text of per-step errors for one model."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        for k in range(r.t.size):
            w.writerow([r.run, k + 1, _fmt(r.t[k]), _fmt(r.pos_err[k]), _fmt(r.ori_err_deg[k]), _fmt(r.nees[k])])
    return buf.getvalue()


def write_report(report: BenchmarkReport, out_dir):
    """Write ``<model>.csv`` per model, ``summary.json`` and ``config.json``; returns the paths.

    ``summary.json`` maps each model name to its aggregate entry;
    ``config.json`` echoes the resolved scenario.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for model, results in report.results.items():
        p = out / f"{model}.csv"
        p.write_text(results_csv(results))
        paths.append(p)
    for name, payload in (("summary.json", report.summary()), ("config.json", report.config.to_dict())):
        p = out / name
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def _run_one(cfg, run, want_cov):
    t0 = time.perf_counter()
    data = synthesize_run(cfg, run)
    timings = {"synthesize": time.perf_counter() - t0}
    results = {}
    for model in cfg.models:
        t0 = time.perf_counter()
        results[model] = run_model(cfg, data, model, want_cov)
        timings[model] = time.perf_counter() - t0
        r = results[model]
        log.info("run %d %s: pos RMSE %.4f m%s", run, model, r.pos_rmse, " (diverged)" if r.diverged else "")
    return results, timings


def run_monte_carlo(config, models=None, runs=None, seed=None, mode=None, want_cov=True, workers=1) -> BenchmarkReport:
    """Run every model on ``runs`` seeded simulations.

    Args:
        config: :class:`ScenarioConfig` or a path to its JSON file.
        models, runs, seed, mode: optional overrides of the config values.
        want_cov: compute per-step covariances (needed for NEES).
        workers: number of processes; runs are independent, so the report
            does not depend on this value.

    Raises:
        ConfigError: invalid configuration or overrides.
    """
    cfg = config if isinstance(config, ScenarioConfig) else ScenarioConfig.load(config)
    d = cfg.to_dict()
    if models is not None:
        d["models"] = list(models)
    if runs is not None:
        d["runs"] = runs
    if seed is not None:
        d["seed"] = seed
    if mode is not None:
        d["mode"] = mode
    cfg = ScenarioConfig.from_dict(d)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    report = BenchmarkReport(cfg, {m: [] for m in cfg.models}, {"synthesize": 0.0, **{m: 0.0 for m in cfg.models}})
    if workers == 1:
        outcomes = (_run_one(cfg, run, want_cov) for run in range(cfg.runs))
        _collect(report, outcomes)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            _collect(report, pool.map(_run_one, repeat(cfg), range(cfg.runs), repeat(want_cov)))
    return report


def _collect(report, outcomes):
    # outcomes arrive in run order, so the report is independent of scheduling
    for results, timings in outcomes:
        for model, res in results.items():
            report.results[model].append(res)
        for k, v in timings.items():
            report.timings[k] += v


__all__ = [
    "BenchmarkReport",
    "ConfigError",
    "RunData",
    "RunResult",
    "aggregate",
    "results_csv",
    "run_model",
    "run_monte_carlo",
    "synthesize_run",
    "write_report",
]
