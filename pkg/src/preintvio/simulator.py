"""Analytic trajectories, sensor synthesis and evaluation metrics.

The ground-truth trajectory is a circle with a vertical sinusoid.  Yaw
follows the horizontal velocity and small sinusoidal roll/pitch are
superimposed.  All derivatives are analytic.  Measurement synthesis is
deterministic given a ``numpy.random.Generator``.  The feature world only
depends on ``world_seed`` so every Monte-Carlo run sees the same landmarks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .config import CameraConfig, ImuNoiseSpec, TrajectoryConfig
from .factors import ExtrinsicCalib, RelativePoseMeas
from .manifold import quat_boxminus, quat_boxplus, quat_inverse, quat_multiply, rot_to_quat, rotation_angle

GRAVITY = 9.81
ODOMETRY_SEGMENTS = (7.0, 14.0, 21.0, 28.0, 35.0)

# camera looks along body x, image x to body -y, image y to body -z
R_CAM_IMU = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
CAM0_IN_IMU = np.array([0.05, 0.055, 0.0])

TRAJ_CSV_COLUMNS = ["t", "qx", "qy", "qz", "qw", "px", "py", "pz", "vx", "vy", "vz", "bwx", "bwy", "bwz", "bax", "bay", "baz"]


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class TrajectorySample:
    """Truth at one instant.  ``R_GI`` maps IMU vectors to the global frame."""

    t: float
    R_GI: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    omega: np.ndarray
    accel: np.ndarray

    @property
    def q(self):
        """JPL quaternion of the global-to-IMU rotation."""
        return rot_to_quat(self.R_GI.T)


class AnalyticTrajectory:
    """Circle-sinusoid trajectory with closed-form derivatives."""

    def __init__(self, cfg: TrajectoryConfig | None = None, gravity=GRAVITY):
        self.cfg = (cfg or TrajectoryConfig()).validate()
        self.g = np.array([0.0, 0.0, gravity])

    @property
    def duration(self):
        return self.cfg.duration

    def _angles(self, t):
        c = self.cfg
        wr, wp = 2 * math.pi * c.roll_frequency, 2 * math.pi * c.pitch_frequency
        roll = c.roll_amplitude * math.sin(wr * t)
        droll = c.roll_amplitude * wr * math.cos(wr * t)
        pitch = c.pitch_amplitude * math.sin(wp * t)
        dpitch = c.pitch_amplitude * wp * math.cos(wp * t)
        yaw = c.rate * t + math.pi / 2
        dyaw = c.rate
        return (roll, pitch, yaw), (droll, dpitch, dyaw)

    def position(self, t):
        c = self.cfg
        wz = 2 * math.pi * c.z_frequency
        return np.array([c.radius * math.cos(c.rate * t), c.radius * math.sin(c.rate * t), c.z_amplitude * math.sin(wz * t)])

    def velocity(self, t):
        c = self.cfg
        W, wz = c.rate, 2 * math.pi * c.z_frequency
        return np.array([-c.radius * W * math.sin(W * t), c.radius * W * math.cos(W * t), c.z_amplitude * wz * math.cos(wz * t)])

    def acceleration(self, t):
        c = self.cfg
        W, wz = c.rate, 2 * math.pi * c.z_frequency
        return np.array(
            [-c.radius * W * W * math.cos(W * t), -c.radius * W * W * math.sin(W * t), -c.z_amplitude * wz * wz * math.sin(wz * t)]
        )

    def rotation(self, t):
        (r, p, y), _ = self._angles(t)
        return _rz(y) @ _ry(p) @ _rx(r)

    def body_rate(self, t):
        (r, p, _), (dr, dp, dy) = self._angles(t)
        return np.array(
            [
                dr - dy * math.sin(p),
                dp * math.cos(r) + dy * math.sin(r) * math.cos(p),
                -dp * math.sin(r) + dy * math.cos(r) * math.cos(p),
            ]
        )

    def evaluate(self, t) -> TrajectorySample:
        """Truth at ``t``: rotation, position, velocity, body rate and specific force."""
        if not 0.0 <= t <= self.cfg.duration + 1e-9:
            raise ValueError(f"t={t} outside [0, {self.cfg.duration}]")
        R = self.rotation(t)
        a = self.acceleration(t)
        return TrajectorySample(t, R, self.position(t), self.velocity(t), a, self.body_rate(t), R.T @ (a + self.g))


def trajectory_eval(traj: AnalyticTrajectory, t):
    """Tuple ``(R_GI, p, v, omega_body, accel_body)`` at ``t``."""
    s = traj.evaluate(t)
    return s.R_GI, s.p, s.v, s.omega, s.accel


# ---------------------------------------------------------------------------
# IMU


@dataclass
class ImuStream:
    """IMU samples on a uniform grid plus the true biases at each tick."""

    t: np.ndarray
    wm: np.ndarray
    am: np.ndarray
    bg: np.ndarray
    ba: np.ndarray

    @property
    def rate(self):
        return 1.0 / (self.t[1] - self.t[0])

    def samples(self):
        from .preintegration import ImuSample

        return [ImuSample(w, a, t) for w, a, t in zip(self.wm, self.am, self.t)]

    def index(self, t):
        return int(round(t * self.rate))


def synthesize_imu(traj: AnalyticTrajectory, rate, noise: ImuNoiseSpec, rng=None, seed=None):
    """Noisy IMU samples at ``rate`` Hz over the trajectory duration.

    White noise uses ``sigma / sqrt(dt)`` per axis and the biases follow a
    random walk with increments ``sigma_w sqrt(dt)``.
    """
    if rate <= 0:
        raise ValueError("IMU rate must be positive")
    noise.validate()
    if rng is None:
        rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    n = int(round(traj.duration * rate)) + 1
    t = np.arange(n) * dt
    omega = np.empty((n, 3))
    accel = np.empty((n, 3))
    for i, ti in enumerate(t):
        s = traj.evaluate(min(ti, traj.duration))
        omega[i] = s.omega
        accel[i] = s.accel
    z = rng.standard_normal((4, n, 3))
    bg = np.asarray(noise.bg0, dtype=float) + np.vstack([np.zeros(3), np.cumsum(noise.sigma_wg * math.sqrt(dt) * z[0, :-1], axis=0)])
    ba = np.asarray(noise.ba0, dtype=float) + np.vstack([np.zeros(3), np.cumsum(noise.sigma_wa * math.sqrt(dt) * z[1, :-1], axis=0)])
    wm = omega + bg + noise.sigma_g / math.sqrt(dt) * z[2]
    am = accel + ba + noise.sigma_a / math.sqrt(dt) * z[3]
    return ImuStream(t, wm, am, bg, ba)


# ---------------------------------------------------------------------------
# cameras and features


def stereo_calibs(baseline=0.11):
    """Left and right camera extrinsics (IMU to camera)."""
    p0 = -R_CAM_IMU @ CAM0_IN_IMU
    left = ExtrinsicCalib(R_CAM_IMU.copy(), p0)
    right = ExtrinsicCalib(R_CAM_IMU.copy(), p0 - np.array([baseline, 0.0, 0.0]))
    return [left, right]


@dataclass
class FeatureFrame:
    """Observations at one camera time.

    ``uv[i, c]`` is the normalized measurement of landmark ``ids[i]`` in
    camera ``c``; ``visible[i, c]`` says whether it exists.
    """

    t: float
    ids: np.ndarray
    uv: np.ndarray
    visible: np.ndarray


@dataclass
class FeatureTrack:
    points: dict = field(default_factory=dict)
    frames: list = field(default_factory=list)


def _in_view(pc, cam: CameraConfig):
    z = pc[..., 2]
    ok = z > cam.min_depth * 0.25
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.focal * pc[..., 0] / z + 0.5 * cam.width
        v = cam.focal * pc[..., 1] / z + 0.5 * cam.height
    return ok & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)


def synthesize_features(traj: AnalyticTrajectory, cam: CameraConfig | None = None, rng=None, calibs=None):
    """Stereo feature observations at ``cam.rate`` Hz.

    Landmarks are spawned inside the left camera frustum at depths between
    ``min_depth`` and ``max_depth`` using a generator seeded with
    ``cam.world_seed``; a landmark lives until neither camera sees it and is
    then replaced, keeping ``cam.features`` active landmarks.  Pixel noise of
    ``pixel_sigma`` maps to ``pixel_sigma / focal`` in normalized units and is
    drawn from ``rng`` (no noise if ``rng`` is None).

    Returns:
        ``(frames, points)`` with ``points[id]`` the landmark's global position.
    """
    cam = (cam or CameraConfig()).validate()
    calibs = stereo_calibs(cam.baseline) if calibs is None else calibs
    world = np.random.default_rng(cam.world_seed)
    n_frames = int(round(traj.duration * cam.rate)) + 1
    points = {}
    active = []
    next_id = 0
    frames = []
    sigma = cam.pixel_sigma / cam.focal
    for j in range(n_frames):
        t = min(j / cam.rate, traj.duration)
        s = traj.evaluate(t)
        R_IG = s.R_GI.T

        def to_cam(P, c):
            return (calibs[c].R_CI @ (R_IG @ (P - s.p).T)).T + calibs[c].p_CI

        if active:
            P = np.array([points[i] for i in active])
            vis = np.stack([_in_view(to_cam(P, 0), cam), _in_view(to_cam(P, 1), cam)], axis=1)
            active = [i for i, v in zip(active, vis.any(axis=1)) if v]
        while len(active) < cam.features:
            u = world.uniform(0.02, 0.98) * cam.width
            v = world.uniform(0.02, 0.98) * cam.height
            d = world.uniform(cam.min_depth, cam.max_depth)
            pc = np.array([(u - 0.5 * cam.width) / cam.focal * d, (v - 0.5 * cam.height) / cam.focal * d, d])
            P = s.p + s.R_GI @ (calibs[0].R_IC @ (pc - calibs[0].p_CI))
            points[next_id] = P
            active.append(next_id)
            next_id += 1
        ids = np.array(active, dtype=np.int64)
        P = np.array([points[i] for i in active])
        uv = np.empty((len(ids), 2, 2))
        vis = np.empty((len(ids), 2), dtype=bool)
        for c in range(2):
            pc = to_cam(P, c)
            vis[:, c] = _in_view(pc, cam)
            uv[:, c] = pc[:, :2] / pc[:, 2:3]
        if rng is not None and sigma > 0:
            uv = uv + sigma * rng.standard_normal(uv.shape)
        frames.append(FeatureFrame(t, ids, uv, vis))
    return frames, points


EXACT_RELPOSE_COV = np.eye(6) * 1e-12


def synthesize_relative_poses(traj: AnalyticTrajectory, schedule, cov, rng=None):
    """Relative-pose measurements for ``(t_k, t_j)`` pairs.

    The truth ``(R_jk, p_j in frame k)`` is perturbed by boxplus with
    ``delta ~ N(0, cov)`` (``[δθ, δp]`` order). An all-zero ``cov`` yields
    exact measurements that carry ``EXACT_RELPOSE_COV`` as their weight, since
    a factor cannot be whitened by a singular covariance.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError("relative-pose covariance must be 6x6")
    zero = not np.any(cov)
    L = None if zero else np.linalg.cholesky(cov)
    out = []
    for tk, tj in schedule:
        sk, sj = traj.evaluate(tk), traj.evaluate(tj)
        qk, qj = sk.q, sj.q
        q = quat_multiply(qj, quat_inverse(qk))
        p = sk.R_GI.T @ (sj.p - sk.p)
        if not zero:
            if rng is None:
                raise ValueError("a random generator is required for noisy measurements")
            d = L @ rng.standard_normal(6)
            q = quat_boxplus(q, d[:3])
            p = p + d[3:]
        out.append(RelativePoseMeas(q, p, EXACT_RELPOSE_COV if zero else cov))
    return out


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    t: np.ndarray
    pos_err: np.ndarray
    ori_err_deg: np.ndarray
    pos_rmse: float
    ori_rmse: float
    odo_err: dict
    nees: np.ndarray | None = None

    @property
    def nees_mean(self):
        if self.nees is None or self.nees.size == 0:
            return float("nan")
        return float(np.mean(self.nees))


def _odometric(p_est, R_est, p_true, R_true, length):
    """Mean end-point error over segments of travelled ``length`` metres."""
    dist = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(p_true, axis=0), axis=1))]
    errs = []
    j = 0
    for i in range(len(p_true)):
        j = max(j, i)
        while j < len(p_true) and dist[j] - dist[i] < length:
            j += 1
        if j >= len(p_true):
            break
        # align the estimate's segment start onto the truth
        R_al = R_true[i] @ R_est[i].T
        pj = p_true[i] + R_al @ (p_est[j] - p_est[i])
        errs.append(np.linalg.norm(pj - p_true[j]))
    return float(np.mean(errs)) if errs else float("nan")


def compute_metrics(est, truth, segments=ODOMETRY_SEGMENTS, covariances=None):
    """Errors of an estimated trajectory against the truth.

    Args:
        est, truth: sequences of :class:`~preintvio.manifold.ImuState` on the
            same timestamps (the first element of ``truth`` pairs with the
            first of ``est``).
        segments: odometric segment lengths in metres.
        covariances: optional 15x15 covariances of ``est``; enables NEES.

    Raises:
        ValueError: empty overlap.
    """
    n = min(len(est), len(truth))
    if n == 0:
        raise ValueError("estimate and truth do not overlap")
    est, truth = list(est)[:n], list(truth)[:n]
    p_est = np.array([x.p for x in est])
    p_true = np.array([x.p for x in truth])
    pos_err = np.linalg.norm(p_est - p_true, axis=1)
    ori = np.degrees([rotation_angle(quat_multiply(x.q, quat_inverse(y.q))) for x, y in zip(est, truth)])
    R_est = np.array([x.R.T for x in est])
    R_true = np.array([x.R.T for x in truth])
    odo = {float(L): _odometric(p_est, R_est, p_true, R_true, L) for L in segments}
    nees = None
    if covariances is not None:
        vals = []
        for x, y, P in zip(est, truth, covariances):
            if P is None:
                continue
            d = y.boxminus(x)
            vals.append(float(d @ np.linalg.solve(P, d)))
        nees = np.array(vals)
    return RunMetrics(
        t=np.arange(n, dtype=float),
        pos_err=pos_err,
        ori_err_deg=np.asarray(ori),
        pos_rmse=float(np.sqrt(np.mean(pos_err**2))),
        ori_rmse=float(np.sqrt(np.mean(np.asarray(ori) ** 2))),
        odo_err=odo,
        nees=nees,
    )


def orientation_error(q_est, q_true):
    """Angle (rad) between two orientations via boxminus."""
    return float(np.linalg.norm(quat_boxminus(q_est, q_true)))


def write_trajectory_csv(path, t, states):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_CSV_COLUMNS)
        for ti, x in zip(t, states):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in np.r_[x.q, x.p, x.v, x.bg, x.ba]])


def truth_states(traj: AnalyticTrajectory, times, imu: ImuStream | None = None):
    """Ground-truth :class:`ImuState` at ``times`` (biases from ``imu`` if given)."""
    from .manifold import ImuState

    out = []
    for t in times:
        s = traj.evaluate(t)
        bg = ba = np.zeros(3)
        if imu is not None:
            k = imu.index(t)
            bg, ba = imu.bg[k], imu.ba[k]
        out.append(ImuState(s.q, bg, s.v, ba, s.p))
    return out
