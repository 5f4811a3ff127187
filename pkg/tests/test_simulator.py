import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preintvio.config import CameraConfig, ImuNoiseSpec, TrajectoryConfig
from preintvio.manifold import ImuState, exp_quat, quat_boxminus, quat_inverse, quat_multiply, quat_to_rot, skew
from preintvio.simulator import (
    EXACT_RELPOSE_COV,
    TRAJ_CSV_COLUMNS,
    AnalyticTrajectory,
    compute_metrics,
    orientation_error,
    stereo_calibs,
    synthesize_features,
    synthesize_imu,
    synthesize_relative_poses,
    trajectory_eval,
    truth_states,
    write_trajectory_csv,
)

STILL = TrajectoryConfig(radius=0.0, rate=0.0, z_amplitude=0.0, roll_amplitude=0.0, pitch_amplitude=0.0, duration=2.0)
LEVEL_CIRCLE = TrajectoryConfig(z_amplitude=0.0, roll_amplitude=0.0, pitch_amplitude=0.0, duration=10.0)


def test_stationary_specific_force_is_gravity():
    R, p, v, w, a = trajectory_eval(AnalyticTrajectory(STILL), 1.0)
    np.testing.assert_allclose(w, 0.0, atol=1e-15)
    np.testing.assert_allclose(v, 0.0, atol=1e-15)
    np.testing.assert_allclose(a, R.T @ [0.0, 0.0, 9.81], atol=1e-14)


def test_level_circle_centripetal_acceleration():
    traj = AnalyticTrajectory(LEVEL_CIRCLE)
    for t in (0.0, 1.3, 7.7):
        assert np.linalg.norm(traj.acceleration(t)) == pytest.approx(5.0 * 0.8**2, rel=1e-12)


@given(t=st.floats(0.01, 59.99))
@settings(max_examples=30)
def test_analytic_derivatives(t):
    traj = AnalyticTrajectory()
    h = 1e-6
    np.testing.assert_allclose((traj.position(t + h) - traj.position(t - h)) / (2 * h), traj.velocity(t), atol=1e-5)
    np.testing.assert_allclose((traj.velocity(t + h) - traj.velocity(t - h)) / (2 * h), traj.acceleration(t), atol=1e-5)
    # R_GI' = R_GI [w]x with w the body rate
    dR = (traj.rotation(t + h) - traj.rotation(t - h)) / (2 * h)
    np.testing.assert_allclose(dR, traj.rotation(t) @ skew(traj.body_rate(t)), atol=1e-6)


def test_evaluate_out_of_range():
    with pytest.raises(ValueError):
        AnalyticTrajectory(STILL).evaluate(3.0)


def test_noiseless_imu_equals_truth():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=1.0))
    imu = synthesize_imu(traj, 100, ImuNoiseSpec.zero())
    for i in (0, 37, 100):
        s = traj.evaluate(imu.t[i])
        np.testing.assert_array_equal(imu.wm[i], s.omega)
        np.testing.assert_array_equal(imu.am[i], s.accel)
    assert imu.rate == pytest.approx(100.0)
    assert len(imu.samples()) == 101


def test_imu_is_deterministic_per_seed():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=1.0))
    a = synthesize_imu(traj, 200, ImuNoiseSpec(), seed=4)
    b = synthesize_imu(traj, 200, ImuNoiseSpec(), seed=4)
    c = synthesize_imu(traj, 200, ImuNoiseSpec(), seed=5)
    assert a.am.tobytes() == b.am.tobytes() and a.wm.tobytes() == b.wm.tobytes()
    assert a.am.tobytes() != c.am.tobytes()


def test_discrete_white_noise_variance():
    rate = 100.0
    traj = AnalyticTrajectory(TrajectoryConfig(**{**STILL.__dict__, "duration": 1000.0}))
    noise = ImuNoiseSpec(0.01, 0.02, 0.0, 0.0)
    imu = synthesize_imu(traj, rate, noise, seed=0)
    clean = synthesize_imu(traj, rate, ImuNoiseSpec.zero())
    n = (imu.am - clean.am)[:, 0]
    assert n.size >= 100_000
    assert np.var(n) == pytest.approx(0.02**2 * rate, rel=0.05)
    assert np.var((imu.wm - clean.wm)[:, 1]) == pytest.approx(0.01**2 * rate, rel=0.05)


def test_bias_random_walk_increments():
    traj = AnalyticTrajectory(TrajectoryConfig(**{**STILL.__dict__, "duration": 500.0}))
    imu = synthesize_imu(traj, 100, ImuNoiseSpec(0.0, 0.0, 0.001, 0.002, (0.1, 0.0, 0.0), (0.0, 0.2, 0.0)), seed=1)
    np.testing.assert_array_equal(imu.bg[0], [0.1, 0.0, 0.0])
    np.testing.assert_array_equal(imu.ba[0], [0.0, 0.2, 0.0])
    assert np.var(np.diff(imu.ba[:, 2])) == pytest.approx(0.002**2 * 0.01, rel=0.05)


def test_rejects_bad_rate():
    with pytest.raises(ValueError):
        synthesize_imu(AnalyticTrajectory(STILL), 0.0, ImuNoiseSpec())


def test_optical_axis_projects_to_center():
    cal = stereo_calibs()[0]
    P_imu = cal.R_IC @ (np.array([0.0, 0.0, 2.0]) - cal.p_CI)
    pc = cal.R_CI @ P_imu + cal.p_CI
    np.testing.assert_allclose(pc[:2] / pc[2], 0.0, atol=1e-15)


def _triangulate(rays):
    """Linear least-squares intersection of rays (origin, direction)."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for o, d in rays:
        d = d / np.linalg.norm(d)
        M = np.eye(3) - np.outer(d, d)
        A += M
        b += M @ o
    return np.linalg.solve(A, b)


def test_noiseless_features_triangulate():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=1.0))
    cam = CameraConfig()
    cal = stereo_calibs(cam.baseline)
    frames, points = synthesize_features(traj, cam)
    assert len(frames) == 11
    assert all(f.ids.size == 80 for f in frames)
    worst = 0.0
    for lid in frames[0].ids[:30]:
        rays = []
        for fr in frames:
            i = np.flatnonzero(fr.ids == lid)
            if i.size == 0:
                continue
            s = traj.evaluate(fr.t)
            for c in (0, 1):
                if fr.visible[i[0], c]:
                    o = s.p + s.R_GI @ cal[c].p_IC
                    d = s.R_GI @ cal[c].R_IC @ np.r_[fr.uv[i[0], c], 1.0]
                    rays.append((o, d))
        if len(rays) >= 2:
            worst = max(worst, np.linalg.norm(_triangulate(rays) - points[int(lid)]))
    assert worst <= 1e-9


def test_features_keep_persistent_ids_and_noise():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=2.0))
    clean, _ = synthesize_features(traj)
    noisy, _ = synthesize_features(traj, rng=np.random.default_rng(0))
    assert [f.ids.tolist() for f in clean] == [f.ids.tolist() for f in noisy]
    d = (noisy[3].uv - clean[3].uv).ravel()
    assert np.std(d) == pytest.approx(1.0 / 450.0, rel=0.2)
    assert len(set(clean[0].ids) & set(clean[1].ids)) > 40


def test_relative_poses_exact_and_identity():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=1.0))
    meas = synthesize_relative_poses(traj, [(0.2, 0.5), (0.4, 0.4)], np.zeros((6, 6)))
    sk, sj = traj.evaluate(0.2), traj.evaluate(0.5)
    np.testing.assert_allclose(quat_to_rot(meas[0].q), sj.R_GI.T @ sk.R_GI, atol=1e-12)
    np.testing.assert_allclose(meas[0].p, sk.R_GI.T @ (sj.p - sk.p), atol=1e-12)
    np.testing.assert_allclose(meas[1].q, [0, 0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(meas[1].p, 0.0, atol=1e-12)
    np.testing.assert_array_equal(meas[0].cov, EXACT_RELPOSE_COV)


def test_relative_pose_empirical_covariance():
    traj = AnalyticTrajectory(TrajectoryConfig(duration=1.0))
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 6))
    cov = X @ X.T * 1e-4 + np.eye(6) * 1e-5
    truth = synthesize_relative_poses(traj, [(0.2, 0.5)], np.zeros((6, 6)))[0]
    draws = synthesize_relative_poses(traj, [(0.2, 0.5)] * 10_000, cov, rng)
    d = np.array([np.r_[quat_boxminus(m.q, truth.q), m.p - truth.p] for m in draws])
    emp = np.cov(d.T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) <= 0.05


def test_relative_poses_require_rng_when_noisy():
    with pytest.raises(ValueError):
        synthesize_relative_poses(AnalyticTrajectory(STILL), [(0.0, 1.0)], np.eye(6))


def _truth(n=200):
    traj = AnalyticTrajectory(LEVEL_CIRCLE)
    return truth_states(traj, np.linspace(0, 10, n))


def test_metrics_perfect_estimate():
    truth = _truth()
    m = compute_metrics(truth, truth, covariances=[np.eye(15)] * len(truth))
    assert m.pos_rmse == 0.0 and m.ori_rmse == 0.0
    assert all(v == pytest.approx(0.0, abs=1e-12) for v in m.odo_err.values() if np.isfinite(v))
    assert m.nees_mean == 0.0


def test_metrics_constant_offset():
    truth = _truth()
    est = [ImuState(x.q, x.bg, x.v, x.ba, x.p + [1.0, 0.0, 0.0]) for x in truth]
    m = compute_metrics(est, truth)
    assert m.pos_rmse == pytest.approx(1.0, abs=1e-12)
    assert m.ori_rmse == 0.0
    assert np.isnan(m.nees_mean)


def test_odometric_error_grows_with_heading_bias():
    truth = _truth(400)
    yaw_rate = 0.01
    est = []
    p = truth[0].p.copy()
    for i, x in enumerate(truth):
        t = 10.0 * i / (len(truth) - 1)
        q = quat_multiply(x.q, exp_quat([0.0, 0.0, yaw_rate * t]))
        if i:
            step = truth[i].p - truth[i - 1].p
            p = p + quat_to_rot(exp_quat([0.0, 0.0, -yaw_rate * t])) @ step
        est.append(ImuState(q, x.bg, x.v, x.ba, p.copy()))
    m = compute_metrics(est, truth, segments=(5.0, 10.0, 20.0, 30.0))
    errs = [m.odo_err[L] for L in (5.0, 10.0, 20.0, 30.0)]
    assert all(np.diff(errs) > 0)


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics([], [])
    q = exp_quat([0.0, 0.0, 0.3])
    assert orientation_error(q, quat_inverse(quat_inverse(q))) == 0.0


def test_trajectory_csv(tmp_path):
    truth = _truth(5)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, np.arange(5) * 0.1, truth)
    rows = list(csv.reader(open(path)))
    assert rows[0] == TRAJ_CSV_COLUMNS
    assert len(rows) == 6
    np.testing.assert_allclose([float(v) for v in rows[1][1:5]], truth[0].q)
