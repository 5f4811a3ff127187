"""Closed-form IMU preintegration (Model 1, Model 2) and the discrete baseline.

All three models share the same state layout.  The error-state order is
``[θ, b_ω, β (or Δv), b_a, α (or Δp)]`` and Model 2 appends the cloned
orientation error of the current sampling instant as a sixth block.

Typical use::

    s = preint_begin(Model.M1, BiasLinearization(bg, ba), noise)
    for z, dt in samples:
        s = preint_step(s, z, dt)
    factor = preint_finalize(s)

For long sample streams :func:`integrate_samples` runs the whole interval in
one compiled loop.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .config import ConfigError, ImuNoiseSpec
from .manifold import IDENTITY_QUAT, quat_normalize, quat_to_rot

log = logging.getLogger(__name__)

GRAVITY = 9.81
COND_LIMIT = 1e14
REGULARIZATION = 1e-12


class Model(str, enum.Enum):
    M1 = "m1"
    M2 = "m2"
    DISCRETE = "discrete"

    @property
    def code(self):
        return {"m1": K.M1, "m2": K.M2, "discrete": K.DISCRETE}[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, Model):
            return value
        try:
            return cls(str(value).lower())
        except ValueError as exc:
            raise ValueError(f"unknown preintegration model {value!r}") from exc


@dataclass(frozen=True)
class ImuSample:
    """Raw IMU measurement at time ``t``."""

    wm: np.ndarray
    am: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class BiasLinearization:
    """Linearization point of one interval.

    ``q_star`` is the global-to-IMU orientation estimate at the interval
    start and is only used by Model 2.
    """

    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_star: np.ndarray | None = None


def gravity_vector(magnitude=GRAVITY):
    return np.array([0.0, 0.0, float(magnitude)])


@dataclass
class PreintState:
    model: Model
    lin: BiasLinearization
    qc: np.ndarray
    gk: np.ndarray
    q: np.ndarray
    v: np.ndarray  # [alpha, beta]
    P: np.ndarray
    J: np.ndarray  # [Jq, Ja, Jb, Ha, Hb, Oa, Ob]
    dT: float = 0.0
    steps: int = 0
    g: np.ndarray = field(default_factory=gravity_vector)

    @property
    def alpha(self):
        return self.v[0:3]

    @property
    def beta(self):
        return self.v[3:6]

    Jq = property(lambda self: self.J[0])
    Ja = property(lambda self: self.J[1])
    Jb = property(lambda self: self.J[2])
    Ha = property(lambda self: self.J[3])
    Hb = property(lambda self: self.J[4])
    Oa = property(lambda self: self.J[5])
    Ob = property(lambda self: self.J[6])

    def copy(self):
        return replace(
            self, q=self.q.copy(), v=self.v.copy(), P=self.P.copy(), J=self.J.copy()
        )


@dataclass(frozen=True)
class PreintegratedFactor:
    """Finalized relative IMU measurement between two keyframes."""

    model: Model
    q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    cov: np.ndarray
    Jq: np.ndarray
    Ja: np.ndarray
    Jb: np.ndarray
    Ha: np.ndarray
    Hb: np.ndarray
    Oa: np.ndarray
    Ob: np.ndarray
    lin: BiasLinearization
    dT: float
    g: np.ndarray
    regularized: bool = False

    @property
    def info(self):
        return np.linalg.inv(self.cov)

    @property
    def sqrt_info(self):
        """Lower-triangular ``W`` with ``W^T W = cov^{-1}``."""
        L = np.linalg.cholesky(self.cov)
        return np.linalg.inv(L)


def preint_begin(model, lin: BiasLinearization, noise: ImuNoiseSpec, gravity=GRAVITY):
    """Zero-initialized preintegration state for one interval."""
    model = Model.parse(model)
    try:
        noise.validate()
    except ConfigError as exc:
        raise ValueError(str(exc)) from exc
    g = gravity_vector(gravity)
    if model is Model.M2:
        if lin.q_star is None:
            raise ValueError("Model 2 requires the initial orientation q_star")
        gk = quat_to_rot(quat_normalize(lin.q_star)) @ g
        n = 18
    else:
        gk = np.zeros(3)
        n = 15
    lin = BiasLinearization(
        np.asarray(lin.bg, dtype=float).copy(),
        np.asarray(lin.ba, dtype=float).copy(),
        None if lin.q_star is None else quat_normalize(lin.q_star),
    )
    return PreintState(
        model=model,
        lin=lin,
        qc=noise.qc,
        gk=gk,
        q=IDENTITY_QUAT.copy(),
        v=np.zeros(6),
        P=np.zeros((n, n)),
        J=np.zeros((7, 3, 3)),
        g=g,
    )


def _step(s: PreintState, z: ImuSample, dt, expected):
    if s.model is not expected:
        raise ValueError(f"state holds {s.model.value}, step expects {expected.value}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    out = s.copy()
    out.q = K.step(
        s.model.code,
        out.q,
        out.v,
        out.P,
        out.J,
        np.asarray(z.wm, dtype=float),
        np.asarray(z.am, dtype=float),
        out.lin.bg,
        out.lin.ba,
        out.gk,
        float(dt),
        out.qc,
        True,
    )
    out.dT += dt
    out.steps += 1
    return out


def model1_step(s: PreintState, z: ImuSample, dt: float) -> PreintState:
    """Closed-form step assuming constant measurements over ``dt``."""
    return _step(s, z, dt, Model.M1)


def model2_step(s: PreintState, z: ImuSample, dt: float, g=None) -> PreintState:
    """Closed-form step assuming constant true local acceleration over ``dt``.

    Args:
        g: optional global gravity vector overriding the one fixed at
            :func:`preint_begin`.
    """
    if g is not None:
        g = np.asarray(g, dtype=float)
        if not np.array_equal(g, s.g):
            s = s.copy()
            s.g = g
            s.gk = quat_to_rot(s.lin.q_star) @ g
    return _step(s, z, dt, Model.M2)


def discrete_step(s: PreintState, z: ImuSample, dt: float) -> PreintState:
    """Euler step with piecewise-constant global acceleration."""
    return _step(s, z, dt, Model.DISCRETE)


def preint_step(s: PreintState, z: ImuSample, dt: float) -> PreintState:
    return _step(s, z, dt, s.model)


def preint_finalize(s: PreintState) -> PreintegratedFactor:
    """Freeze an interval into a factor, extracting the 15x15 covariance."""
    if s.steps == 0:
        raise ValueError("cannot finalize an empty preintegration interval")
    cov = s.P[:15, :15].copy()
    cov = 0.5 * (cov + cov.T)
    regularized = False
    if np.linalg.cond(cov) > COND_LIMIT:
        cov = cov + REGULARIZATION * np.eye(15)
        regularized = True
        log.debug("preintegration covariance near-singular, regularized")
    J = s.J.copy()
    return PreintegratedFactor(
        model=s.model,
        q=s.q.copy(),
        alpha=s.v[0:3].copy(),
        beta=s.v[3:6].copy(),
        cov=cov,
        Jq=J[0],
        Ja=J[1],
        Jb=J[2],
        Ha=J[3],
        Hb=J[4],
        Oa=J[5],
        Ob=J[6],
        lin=s.lin,
        dT=s.dT,
        g=s.g.copy(),
        regularized=regularized,
    )


def integrate_samples(model, lin, noise, t, wm, am, gravity=GRAVITY, with_cov=True, finalize=True):
    """Preintegrate samples ticking on ``t``; sample ``i`` holds over ``[t_i, t_{i+1}]``.

    Args:
        t: ``(N,)`` strictly increasing timestamps (``N >= 2``).
        wm, am: ``(N, 3)`` raw gyro and accelerometer samples.
        finalize: return a :class:`PreintegratedFactor` (default) or the raw
            :class:`PreintState`.
    """
    t = np.asarray(t, dtype=float)
    dts = np.diff(t)
    if dts.size == 0:
        raise ValueError("need at least two samples to span an interval")
    if np.any(dts <= 0):
        raise ValueError("timestamps must be strictly increasing")
    s = preint_begin(model, lin, noise, gravity)
    wm = np.ascontiguousarray(wm, dtype=float)[: dts.size]
    am = np.ascontiguousarray(am, dtype=float)[: dts.size]
    s.q = K.integrate(
        s.model.code, s.q, s.v, s.P, s.J, wm, am, dts, s.lin.bg, s.lin.ba, s.gk, s.qc, with_cov
    )
    s.dT = float(t[-1] - t[0])
    s.steps = dts.size
    return preint_finalize(s) if finalize else s


def state_transition(F_eval, dt, substeps=1):
    """Integrate ``dPhi/dt = F(t) Phi`` from ``0`` to ``dt`` with classical RK4.

    Args:
        F_eval: callable ``F_eval(t) -> (n, n)`` array, or a constant array.
        dt: interval length.
        substeps: number of RK4 steps.
    """
    if not callable(F_eval):
        F_const = np.asarray(F_eval, dtype=float)
        F_eval = lambda _t: F_const  # noqa: E731
    n = F_eval(0.0).shape[0]
    Phi = np.eye(n)
    h = dt / substeps
    for i in range(substeps):
        t0 = i * h
        k1 = F_eval(t0) @ Phi
        k2 = F_eval(t0 + 0.5 * h) @ (Phi + 0.5 * h * k1)
        k3 = F_eval(t0 + 0.5 * h) @ (Phi + 0.5 * h * k2)
        k4 = F_eval(t0 + h) @ (Phi + h * k3)
        Phi = Phi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Phi


def error_system_F(model, Rku, w, a, gt=None):
    """Continuous error-system matrix ``F(u)`` for Model 1 (15) or Model 2 (18)."""
    model = Model.parse(model)
    n = 18 if model is Model.M2 else 15
    F = np.zeros((n, n))
    F[0:3, 0:3] = -K.skew(np.asarray(w, dtype=float))
    F[0:3, 3:6] = -np.eye(3)
    F[6:9, 0:3] = -Rku @ K.skew(np.asarray(a, dtype=float))
    F[6:9, 9:12] = -Rku
    F[12:15, 6:9] = np.eye(3)
    if model is Model.M2:
        F[6:9, 15:18] = -Rku @ K.skew(np.asarray(gt, dtype=float))
    return F
