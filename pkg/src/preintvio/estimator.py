"""Sliding-window visual-inertial estimator.

One state is created per camera frame.  The newest ``inertial_window``
states carry the full 15-DOF IMU state and are linked by preintegrated
factors.  Older states keep only their pose, for up to ``pose_window`` more
frames.  Leaving the inertial window marginalizes ``{v, b_ω, b_a}``
together with the oldest preintegrated factor.  Leaving the pose window
marginalizes the pose together with every landmark anchored there.

In tightly-coupled mode landmarks are inverse-depth points anchored in the
left camera of their first stereo observation.  When the anchor leaves the
window the track is restarted as a fresh landmark at the next frame that
sees it, so no measurement is used twice.  In loosely-coupled mode
consecutive frames are linked by relative-pose factors instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import EstimatorConfig, ImuNoiseSpec, SolverConfig
from .factors import ImuFactor, PriorFactor, RelativePoseFactor, imu_keys
from .manifold import ImuState, quat_multiply
from .optimizer import FactorGraph, WindowPolicy, WindowState, marginalize, solve, window_advance
from .preintegration import BiasLinearization, Model, integrate_samples
from .visual import VisualBatch

log = logging.getLogger(__name__)

RHO_MIN = 1.0 / 200.0
RHO_MAX = 2.0


@dataclass
class EstimateRecord:
    t: float
    state: ImuState
    cov: np.ndarray | None = None


def predict(x: ImuState, f) -> ImuState:
    """Propagate ``x`` through a preintegrated factor (mean only)."""
    R = x.R
    dT = f.dT
    q = quat_multiply(f.q, x.q)
    if f.model is Model.M2:
        v = x.v + R.T @ f.beta
        p = x.p + x.v * dT + R.T @ f.alpha
    else:
        v = x.v - f.g * dT + R.T @ f.beta
        p = x.p + x.v * dT - 0.5 * f.g * dT * dT + R.T @ f.alpha
    return ImuState(q, x.bg, v, x.ba, p)


def stereo_geometry(calib0, calib1):
    """Rotation and translation taking left-camera points into the right camera."""
    R = calib1.R_CI @ calib0.R_IC
    return R, -R @ calib0.p_CI + calib1.p_CI


def stereo_inverse_depth(m0, m1, calib0, calib1, geometry=None):
    """Inverse depth of a point seen at ``m0`` (left) and ``m1`` (right).

    Solves ``m1 × (R m0 d + t) = 0`` in least squares for the depth ``d``
    along ``m0``; the result is clamped to a sane range.  ``geometry`` is an
    optional precomputed :func:`stereo_geometry`.
    """
    R, t = stereo_geometry(calib0, calib1) if geometry is None else geometry
    a = R @ np.array([m0[0], m0[1], 1.0])
    b0, b1 = float(m1[0]), float(m1[1])
    # c = b x (R a), d = b x t with b = [m1, 1]
    c = (b1 * a[2] - a[1], a[0] - b0 * a[2], b0 * a[1] - b1 * a[0])
    d = (b1 * t[2] - t[1], t[0] - b0 * t[2], b0 * t[1] - b1 * t[0])
    den = c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
    if den < 1e-18:
        return RHO_MIN
    depth = -(c[0] * d[0] + c[1] * d[1] + c[2] * d[2]) / den
    if depth <= 0:
        return RHO_MIN
    return min(max(1.0 / depth, RHO_MIN), RHO_MAX)


class SlidingWindowEstimator:
    """Fixed-lag smoother over camera-rate states.

    Args:
        model: preintegration model.
        imu_noise: noise densities assumed by the preintegration covariance.
        calibs: ``[left, right]`` camera extrinsics.
        pixel_sigma_norm: normalized-coordinate measurement sigma.
        est_cfg, solver_cfg: window/solver settings.
        mode: ``"tightly-coupled"`` or ``"loosely-coupled"``.
        gravity: gravity magnitude.
    """

    def __init__(
        self,
        model,
        imu_noise: ImuNoiseSpec,
        calibs,
        pixel_sigma_norm,
        est_cfg: EstimatorConfig | None = None,
        solver_cfg: SolverConfig | None = None,
        mode="tightly-coupled",
        gravity=9.81,
    ):
        self.model = Model.parse(model)
        self.noise = imu_noise
        self.calibs = calibs
        self.cfg = est_cfg or EstimatorConfig()
        if solver_cfg is None:
            robust = {} if self.cfg.robust == "none" else {"visual": (self.cfg.robust, self.cfg.robust_k), "relpose": (self.cfg.robust, self.cfg.robust_k)}
            solver_cfg = SolverConfig(max_iterations=self.cfg.max_iterations, robust=robust)
        self.solver_cfg = solver_cfg
        if mode not in ("tightly-coupled", "loosely-coupled"):
            raise ValueError(f"unknown estimator mode {mode!r}")
        self.mode = mode
        self.gravity = gravity
        self.policy = WindowPolicy(self.cfg.inertial_window, self.cfg.pose_window)
        self.graph = FactorGraph()
        vis = self.solver_cfg.robust.get("visual", ("none", 1.345))
        self.batch = VisualBatch(calibs, pixel_sigma_norm, vis[0], 1.345 if vis[1] is None else vis[1])
        if mode == "tightly-coupled":
            self.graph.add_batch(self.batch)
        self.window = WindowState()
        self._stereo = stereo_geometry(calibs[0], calibs[1])
        self.track_lm = {}
        self.next_lm = 0
        self.sid = -1
        self.t_last = None
        self.history = []
        self.last_result = None

    # -- helpers ------------------------------------------------------------
    def state(self, sid):
        v = self.graph.values
        return ImuState(v[("q", sid)], v[("bg", sid)], v[("v", sid)], v[("ba", sid)], v[("p", sid)])

    def _add_state(self, sid, x: ImuState):
        g = self.graph
        g.add_variable(("q", sid), x.q, "quat")
        g.add_variable(("bg", sid), x.bg)
        g.add_variable(("v", sid), x.v)
        g.add_variable(("ba", sid), x.ba)
        g.add_variable(("p", sid), x.p)

    # -- public API -----------------------------------------------------------
    def initialize(self, t0, x0: ImuState, P0):
        """Start the window at ``x0`` with a full-state Gaussian prior ``P0``."""
        self.sid = 0
        self.t_last = t0
        self._add_state(0, x0)
        self.graph.add_factor(PriorFactor.gaussian(imu_keys(0), ["quat", "vec", "vec", "vec", "vec"], [x0.q, x0.bg, x0.v, x0.ba, x0.p], P0))
        self.window = WindowState([0], [])

    def add_frame(self, t, imu_t, wm, am, features=None, relpose=None, want_cov=False):
        """Process one camera frame.

        Args:
            t: frame time.
            imu_t, wm, am: IMU samples spanning ``[t_prev, t]`` (inclusive).
            features: :class:`~preintvio.simulator.FeatureFrame` (tightly coupled).
            relpose: :class:`~preintvio.factors.RelativePoseMeas` from the
                previous frame to this one (loosely coupled).
            want_cov: also compute the newest state's marginal covariance.

        Returns:
            :class:`EstimateRecord` of the newest state.
        """
        prev = self.sid
        xk = self.state(prev)
        lin = BiasLinearization(xk.bg, xk.ba, xk.q if self.model is Model.M2 else None)
        f = integrate_samples(self.model, lin, self.noise, imu_t, wm, am, gravity=self.gravity)
        sid = prev + 1
        self._add_state(sid, predict(xk, f))
        self.graph.add_factor(ImuFactor(prev, sid, f))
        self.sid = sid
        self.t_last = t

        if self.mode == "tightly-coupled" and features is not None:
            self._add_features(sid, features)
        if self.mode == "loosely-coupled" and relpose is not None:
            self.graph.add_factor(RelativePoseFactor(prev, sid, relpose))

        anchored = {s: self.batch.anchored_at(s) for s in self.window.poses[:1]}
        self.window, _, requests = window_advance(self.window, sid, self.policy, anchored)
        for req in requests:
            self._marginalize(req)

        res = solve(self.graph, self.solver_cfg, check_rank=False)
        self.last_result = res
        x = self.state(sid)
        cov = res.covariance(list(imu_keys(sid))) if want_cov else None
        rec = EstimateRecord(t, x, cov)
        self.history.append(rec)
        return rec

    def _add_features(self, sid, fr):
        b = self.batch
        for i, tid in enumerate(fr.ids):
            tid = int(tid)
            vis = fr.visible[i]
            lid = self.track_lm.get(tid)
            if lid is not None and lid in b.landmarks:
                for c in (0, 1):
                    if vis[c]:
                        b.add_observation(lid, sid, c, fr.uv[i, c])
                continue
            if not (vis[0] and vis[1]):
                continue
            rho = stereo_inverse_depth(fr.uv[i, 0], fr.uv[i, 1], self.calibs[0], self.calibs[1], self._stereo)
            lid = self.next_lm
            self.next_lm += 1
            b.add_landmark(lid, sid, 0, [fr.uv[i, 0, 0], fr.uv[i, 0, 1], rho])
            b.add_observation(lid, sid, 0, fr.uv[i, 0])
            b.add_observation(lid, sid, 1, fr.uv[i, 1])
            self.track_lm[tid] = lid

    def _marginalize(self, req):
        if req.kind == "inertial":
            marginalize(self.graph, req.keys, cfg=self.solver_cfg)
            return
        lids = self.batch.anchored_at(req.state)
        sel = [lids] if self.mode == "tightly-coupled" else None
        marginalize(self.graph, req.keys, sel, cfg=self.solver_cfg)
        self.batch.drop_state(req.state)
        if lids:
            dead = set(lids)
            self.track_lm = {t: l for t, l in self.track_lm.items() if l not in dead}
