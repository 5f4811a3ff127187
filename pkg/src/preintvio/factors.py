"""Residuals and analytic Jacobians for every measurement type.

The functional API (``imu_factor_model1`` and friends) returns a
:class:`ResidualBlock` whose Jacobian blocks are taken with respect to
boxplus perturbations of the named inputs.  The graph API at the bottom
wraps the same functions into :class:`Factor` objects keyed by optimizer
variables.

Quaternion residuals ``2 vec(q)`` always use the ``q_4 >= 0`` representative
so they measure the short-arc angle; Jacobians carry the matching sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .manifold import (
    ImuState,
    _qprod,
    quat_multiply_batch,
    exp_quat,
    quat_boxminus,
    quat_inverse,
    quat_left,
    quat_normalize,
    quat_right,
    quat_to_rot,
    skew,
)
from . import _kernels as _K
from .preintegration import Model, PreintegratedFactor

HUBER_K = 1.345
CAUCHY_K = 1.0
MIN_DEPTH_H3 = 1e-8

I3 = np.eye(3)

# column offsets of the 15-DOF IMU error state
TH, BG, V, BA, P = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


@dataclass
class ResidualBlock:
    """Residual ``e`` with Jacobian blocks ``(name, J)`` and information ``info``."""

    e: np.ndarray
    J: list
    info: np.ndarray
    robust: str = "none"
    valid: bool = True

    def jacobian(self, name):
        for key, block in self.J:
            if key == name:
                return block
        raise KeyError(name)

    def cost(self, k=None):
        v = float(self.e @ self.info @ self.e)
        return 0.5 * robust_weight(self.robust, v, k)[0]


@dataclass
class ExtrinsicCalib:
    """Rigid IMU-to-camera transform: ``R_CI`` rotates IMU vectors into the camera
    frame and ``p_CI`` is the IMU origin expressed in the camera frame."""

    R_CI: np.ndarray
    p_CI: np.ndarray

    @property
    def R_IC(self):
        return self.R_CI.T

    @property
    def p_IC(self):
        """Camera origin in the IMU frame."""
        return -self.R_CI.T @ self.p_CI


@dataclass
class FeatureInvDepth:
    """Inverse-depth feature anchored at ``(anchor_time, anchor_cam)``."""

    alpha: float
    beta: float
    rho: float
    anchor_time: int = 0
    anchor_cam: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("inverse depth must be non-negative")

    @property
    def vector(self):
        return np.array([self.alpha, self.beta, self.rho])


@dataclass
class RelativePoseMeas:
    """Measured pose of frame ``j`` relative to keyframe ``k``.

    ``q`` is the JPL quaternion of ``R_jk`` and ``p`` is frame ``j``'s origin in
    frame ``k``.
    """

    q: np.ndarray
    p: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (6, 6) or not np.allclose(self.cov, self.cov.T):
            raise ValueError("relative-pose covariance must be a symmetric 6x6 matrix")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("relative-pose covariance must be positive definite") from exc


# ---------------------------------------------------------------------------
# robust weighting


def robust_weight(kind, v, k=None):
    """Robust cost ``gamma(v)`` of a squared normalized residual and its slope.

    Args:
        kind: ``"none"``, ``"huber"`` or ``"cauchy"``.
        v: squared normalized residual, ``v >= 0``.
        k: kernel width (defaults: Huber 1.345, Cauchy 1).

    Returns:
        ``(cost, weight)`` with ``weight = d cost / d v``.
    """
    if v < 0:
        raise ValueError(f"squared residual must be non-negative, got {v}")
    if kind in (None, "none"):
        return v, 1.0
    if kind == "huber":
        k = HUBER_K if k is None else k
        if k <= 0:
            raise ValueError("robust parameter must be positive")
        if v < k * k:
            return v, 1.0
        r = math.sqrt(v)
        return 2.0 * k * r - k * k, k / r
    if kind == "cauchy":
        k = CAUCHY_K if k is None else k
        if k <= 0:
            raise ValueError("robust parameter must be positive")
        k2 = k * k
        return k2 * math.log1p(v / k2), 1.0 / (1.0 + v / k2)
    raise ValueError(f"unknown robust kernel {kind!r}")


# ---------------------------------------------------------------------------
# quaternion helpers


def _qmul(q, p):
    return _qprod(q, p)


def _vec_sign(q):
    return 1.0 if q[3] >= 0 else -1.0


def _skew_batch(v):
    S = np.zeros((v.shape[0], 3, 3))
    S[:, 0, 1], S[:, 0, 2], S[:, 1, 2] = -v[:, 2], v[:, 1], -v[:, 0]
    S[:, 1, 0], S[:, 2, 0], S[:, 2, 1] = v[:, 2], -v[:, 1], v[:, 0]
    return S


def exp_quat_jacobian(theta):
    """Derivative of :func:`exp_quat` (4x3) at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    n = np.linalg.norm(theta)
    if n < 1e-3:
        n2 = n * n
        s = 0.5 - n2 / 48.0 + n2 * n2 / 3840.0
        ds = -1.0 / 24.0 + n2 / 960.0
    else:
        s = math.sin(0.5 * n) / n
        ds = (0.5 * n * math.cos(0.5 * n) - math.sin(0.5 * n)) / n**3
    D = np.empty((4, 3))
    D[:3] = s * I3 + ds * np.outer(theta, theta)
    D[3] = -0.5 * s * theta
    return D


def _dq_left(q):
    """d 2vec([δ/2; 1] ⊗ q) / dδ for a canonical q."""
    return q[3] * I3 + skew(q[:3])


# ---------------------------------------------------------------------------
# IMU factors


def _pack_state(x: ImuState):
    return np.concatenate([x.q, x.bg, x.v, x.ba, x.p])


def _factor_arrays(f: PreintegratedFactor):
    Jm = np.ascontiguousarray(np.stack([f.Jq, f.Ja, f.Jb, f.Ha, f.Hb, f.Oa, f.Ob]))
    qstar = f.lin.q_star if f.lin.q_star is not None else np.array([0.0, 0.0, 0.0, 1.0])
    return (
        np.asarray(f.q, dtype=float),
        np.asarray(f.alpha, dtype=float),
        np.asarray(f.beta, dtype=float),
        Jm,
        np.asarray(f.lin.bg, dtype=float),
        np.asarray(f.lin.ba, dtype=float),
        np.asarray(qstar, dtype=float),
        np.asarray(f.g, dtype=float),
        float(f.dT),
    )


def _imu_eval(x0, x1, model2, arrays, want_jac):
    e = np.empty(15)
    Jk = np.empty((15, 15))
    Jk1 = np.empty((15, 15))
    fq, fa, fb, Jm, bg, ba, qs, g, dT = arrays
    _K.imu_residual(model2, x0, x1, fq, fa, fb, Jm, bg, ba, qs, g, dT, want_jac, e, Jk, Jk1)
    return e, Jk, Jk1


def _imu_residual(xk: ImuState, xk1: ImuState, f: PreintegratedFactor, model2: bool):
    """Residual ``[e_θ, e_bω, e_v, e_ba, e_p]`` with Jacobians w.r.t. both states.

    The orientation error is ``2 vec(q_{k+1} ⊗ q_k^{-1} ⊗ q̆^{-1} ⊗ q_b)`` with
    the bias correction ``q_b = exp(J_q (b_ω - b_ω*))``; the bias-Jacobian
    block uses the exact derivative of that quaternion.  Model 2 subtracts
    the orientation-correction terms ``O_β δθ`` and ``O_α δθ``.
    """
    e, Jk, Jk1 = _imu_eval(_pack_state(xk), _pack_state(xk1), model2, _factor_arrays(f), True)
    return ResidualBlock(e, [("x_k", Jk), ("x_k1", Jk1)], f.info)


def imu_factor_model1(xk: ImuState, xk1: ImuState, f: PreintegratedFactor) -> ResidualBlock:
    """Model 1 (and discrete) preintegrated IMU residual with gravity outside."""
    if f.model not in (Model.M1, Model.DISCRETE):
        raise ValueError(f"expected a Model 1 or discrete factor, got {f.model.value}")
    return _imu_residual(xk, xk1, f, model2=False)


def imu_factor_model2(xk: ImuState, xk1: ImuState, f: PreintegratedFactor) -> ResidualBlock:
    """Model 2 residual; gravity lives inside the preintegrated Δv, Δp."""
    if f.model is not Model.M2:
        raise ValueError(f"expected a Model 2 factor, got {f.model.value}")
    if f.lin.q_star is None:
        raise ValueError("Model 2 factor is missing its orientation linearization point")
    return _imu_residual(xk, xk1, f, model2=True)


def imu_factor(xk, xk1, f):
    if f.model is Model.M2:
        return imu_factor_model2(xk, xk1, f)
    return imu_factor_model1(xk, xk1, f)


# ---------------------------------------------------------------------------
# visual factors


def h_proj(h):
    """Jacobian of the perspective projection at ``h``."""
    h1, h2, h3 = h
    return np.array(
        [[1.0 / h3, 0.0, -h1 / h3**2], [0.0, 1.0 / h3, -h2 / h3**2]]
    )


def project(h):
    return h[:2] / h[2]


def inverse_depth_factor(case, x_a, x_k, feat: FeatureInvDepth, calib_i, calib_j, z, sigma=1.0):
    """Inverse-depth reprojection residual of one observation.

    Args:
        case: ``"i"`` anchor view, ``"ii"`` same time in another camera,
            ``"iii"`` a different time.
        x_a, x_k: anchor and observing IMU states (anything with ``q``/``p``);
            ignored where the case does not need them.
        feat: feature in its anchor camera ``calib_i``.
        calib_j: observing camera.
        z: normalized measurement (2,).
        sigma: normalized-coordinate standard deviation.

    Returns:
        :class:`ResidualBlock` with blocks ``feature`` and, for case iii,
        ``theta_a``, ``p_a``, ``theta_k``, ``p_k``.  ``valid`` is False when
        the point is at or behind the camera plane.
    """
    m = np.array([feat.alpha, feat.beta, 1.0])
    rho = feat.rho
    blocks = []
    if case == "i":
        h = m
        Jf_of_h = np.zeros((3, 3))
        Jf_of_h[:, 0:2] = np.eye(3)[:, 0:2]
        M_th_a = M_pa = M_th_k = M_pk = None
    elif case == "ii":
        R_ji = calib_j.R_CI @ calib_i.R_IC
        p_ji = -calib_j.R_CI @ calib_i.R_IC @ calib_i.p_CI + calib_j.p_CI
        h = R_ji @ m + rho * p_ji
        Jf_of_h = np.column_stack([R_ji[:, 0], R_ji[:, 1], p_ji])
        M_th_a = M_pa = M_th_k = M_pk = None
    elif case == "iii":
        Rk = quat_to_rot(x_k.q)
        R_Ga = quat_to_rot(x_a.q).T
        R_ICi = calib_i.R_IC
        R_CjI = calib_j.R_CI
        w = R_ICi @ (m - rho * calib_i.p_CI)
        dp = x_a.p - x_k.p
        y = Rk @ R_Ga @ w + rho * Rk @ dp
        h = R_CjI @ y + rho * calib_j.p_CI
        R_chain = R_CjI @ Rk @ R_Ga @ R_ICi
        Jf_of_h = np.column_stack(
            [R_chain[:, 0], R_chain[:, 1], -R_chain @ calib_i.p_CI + R_CjI @ Rk @ dp + calib_j.p_CI]
        )
        M_th_a = -R_CjI @ Rk @ R_Ga @ skew(w)
        M_pa = rho * R_CjI @ Rk
        M_th_k = R_CjI @ skew(y)
        M_pk = -M_pa
    else:
        raise ValueError(f"unknown observation case {case!r}")

    info = np.eye(2) / sigma**2
    if h[2] <= MIN_DEPTH_H3:
        return ResidualBlock(np.zeros(2), [], info, valid=False)
    H = h_proj(h)
    e = project(h) - np.asarray(z, dtype=float)
    blocks.append(("feature", H @ Jf_of_h))
    if case == "iii":
        blocks += [
            ("theta_a", H @ M_th_a),
            ("p_a", H @ M_pa),
            ("theta_k", H @ M_th_k),
            ("p_k", H @ M_pk),
        ]
    return ResidualBlock(e, blocks, info)


# ---------------------------------------------------------------------------
# relative pose


def relative_pose_factor(x_k, x_j, meas: RelativePoseMeas) -> ResidualBlock:
    """Loosely-coupled relative-pose residual between keyframe ``k`` and frame ``j``."""
    q_jk = _qmul(x_j.q, quat_inverse(x_k.q))
    q_r = _qmul(q_jk, quat_inverse(meas.q))
    s = _vec_sign(q_r)
    Rk = quat_to_rot(x_k.q)
    d = Rk @ (x_j.p - x_k.p)
    e = np.concatenate([2.0 * s * q_r[:3], d - meas.p])
    Jk = np.zeros((6, 6))
    Jj = np.zeros((6, 6))
    Jj[0:3, 0:3] = _dq_left(s * q_r)
    Jk[0:3, 0:3] = -s * (quat_left(q_jk) @ quat_right(quat_inverse(meas.q)))[:3, :3]
    Jk[3:6, 0:3] = skew(d)
    Jk[3:6, 3:6] = -Rk
    Jj[3:6, 3:6] = Rk
    return ResidualBlock(
        e,
        [("theta_k", Jk[:, 0:3]), ("p_k", Jk[:, 3:6]), ("theta_j", Jj[:, 0:3]), ("p_j", Jj[:, 3:6])],
        np.linalg.inv(meas.cov),
    )


# ---------------------------------------------------------------------------
# marginal prior


@dataclass
class MarginalPrior:
    """Linearized prior ``0.5 ||A_m (x ⊟ x_lin) + b_m||^2``.

    ``keys``/``kinds`` name the retained variables and whether each is a
    ``"quat"`` or ``"vec"``; ``x_lin`` holds their linearization values.
    """

    A: np.ndarray
    b: np.ndarray
    keys: list
    kinds: list
    x_lin: list
    dofs: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if not self.dofs:
            self.dofs = [3 if k == "quat" else int(np.size(x)) for k, x in zip(self.kinds, self.x_lin)]
        if self.A.shape[1] != sum(self.dofs):
            raise ValueError(f"A_m has {self.A.shape[1]} columns, retained DOF is {sum(self.dofs)}")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A_m rows and b_m size differ")
        if self.A.shape[0] > self.A.shape[1]:
            raise ValueError("A_m must have no more rows than columns")


def marginal_prior_factor(values, prior: MarginalPrior) -> ResidualBlock:
    """Evaluate a marginal prior at ``values`` (list aligned with ``prior.keys``)."""
    if len(values) != len(prior.keys):
        raise ValueError("value list does not match the prior's variables")
    parts = []
    derivs = []
    for kind, x, x0, dof in zip(prior.kinds, values, prior.x_lin, prior.dofs):
        x = np.asarray(x, dtype=float)
        if kind == "quat":
            qt = _qmul(x, quat_inverse(x0))
            qt = _vec_sign(qt) * qt
            parts.append(2.0 * qt[:3])
            derivs.append(_dq_left(qt))
        else:
            if x.size != dof:
                raise ValueError("dimension mismatch in marginal prior")
            parts.append(x - x0)
            derivs.append(None)
    dx = np.concatenate(parts)
    e = prior.A @ dx + prior.b
    blocks = []
    col = 0
    for key, dof, D in zip(prior.keys, prior.dofs, derivs):
        Ablk = prior.A[:, col : col + dof]
        blocks.append((key, Ablk if D is None else Ablk @ D))
        col += dof
    return ResidualBlock(e, blocks, np.eye(e.size))


# ---------------------------------------------------------------------------
# graph factors


def imu_keys(k):
    return (("q", k), ("bg", k), ("v", k), ("ba", k), ("p", k))


def state_from_values(values, k):
    return ImuState(values[("q", k)], values[("bg", k)], values[("v", k)], values[("ba", k)], values[("p", k)])


def _whitener(info):
    """Upper-triangular ``W`` with ``W^T W = info`` (or None for identity)."""
    return np.linalg.cholesky(info).T


class Factor:
    """Base class: a residual over a tuple of graph variables.

    Subclasses implement :meth:`evaluate` returning ``(e, [J_i], W)`` where the
    Jacobians align with :attr:`keys` and ``W`` whitens the residual (``None``
    means identity).
    """

    kind = "generic"
    keys: tuple = ()

    def evaluate(self, values):
        raise NotImplementedError

    def whitened_residual(self, values):
        """Whitened residual only (None if invalid); used for cost evaluation."""
        return self.whitened(values)[0]

    def whitened(self, values):
        e, Js, W = self.evaluate(values)
        if e is None:
            return None, None
        if W is not None:
            e = W @ e
            Js = [None if J is None else W @ J for J in Js]
        return e, Js

    def whitened_stacked(self, values):
        """Whitened residual and the Jacobian blocks stacked column-wise."""
        e, Js = self.whitened(values)
        if e is None:
            return None, None
        return e, np.hstack(Js)


class ImuFactor(Factor):
    kind = "imu"

    def __init__(self, k0, k1, f: PreintegratedFactor):
        if f.model is Model.M2 and f.lin.q_star is None:
            raise ValueError("Model 2 factor is missing its orientation linearization point")
        self.k0, self.k1, self.f = k0, k1, f
        self.keys = imu_keys(k0) + imu_keys(k1)
        self.W = _whitener(f.info)
        self._model2 = f.model is Model.M2
        self._arrays = _factor_arrays(f)

    def _packed(self, values):
        k0, k1 = self.keys[:5], self.keys[5:]
        return np.concatenate([values[k] for k in k0]), np.concatenate([values[k] for k in k1])

    def evaluate(self, values):
        x0, x1 = self._packed(values)
        e, Jk, Jk1 = _imu_eval(x0, x1, self._model2, self._arrays, True)
        cols = (TH, BG, V, BA, P)
        Js = [Jk[:, c] for c in cols] + [Jk1[:, c] for c in cols]
        return e, Js, self.W

    def whitened_stacked(self, values):
        # the error-state order [θ, b_ω, v, b_a, p] matches the key order
        x0, x1 = self._packed(values)
        e, Jk, Jk1 = _imu_eval(x0, x1, self._model2, self._arrays, True)
        return self.W @ e, np.hstack((self.W @ Jk, self.W @ Jk1))

    def whitened_residual(self, values):
        x0, x1 = self._packed(values)
        e, _, _ = _imu_eval(x0, x1, self._model2, self._arrays, False)
        return self.W @ e


class RelativePoseFactor(Factor):
    kind = "relpose"

    def __init__(self, k, j, meas: RelativePoseMeas):
        self.k, self.j, self.meas = k, j, meas
        self.keys = (("q", k), ("p", k), ("q", j), ("p", j))
        self.W = _whitener(np.linalg.inv(meas.cov))

    def evaluate(self, values):
        xk = _Pose(values[("q", self.k)], values[("p", self.k)])
        xj = _Pose(values[("q", self.j)], values[("p", self.j)])
        rb = relative_pose_factor(xk, xj, self.meas)
        return rb.e, [b for _, b in rb.J], self.W


class PriorFactor(Factor):
    """Marginal prior (or any Gaussian prior written in that form)."""

    kind = "prior"

    def __init__(self, prior: MarginalPrior):
        self.prior = prior
        self.keys = tuple(prior.keys)
        cols = np.cumsum([0] + list(prior.dofs))
        quat = [k == "quat" for k in prior.kinds]
        self._qkeys = [k for k, q in zip(self.keys, quat) if q]
        self._vkeys = [k for k, q in zip(self.keys, quat) if not q]
        self._qcols = np.concatenate([np.arange(a, a + 3) for a, q in zip(cols[:-1], quat) if q] or [np.zeros(0, int)])
        self._vcols = np.concatenate([np.arange(a, b) for a, b, q in zip(cols[:-1], cols[1:], quat) if not q] or [np.zeros(0, int)])
        self._qinv = np.array([quat_inverse(x0) for x0, q in zip(prior.x_lin, quat) if q]).reshape(-1, 4)
        self._v0 = np.concatenate([np.atleast_1d(x0) for x0, q in zip(prior.x_lin, quat) if not q] or [np.zeros(0)])
        self._Aq = np.ascontiguousarray(prior.A[:, self._qcols]).reshape(prior.A.shape[0], -1, 3)

    def _delta(self, values):
        dx = np.empty(self.prior.A.shape[1])
        qt = None
        if self._qkeys:
            Q = np.array([values[k] for k in self._qkeys])
            qt = quat_multiply_batch(Q, self._qinv)
            qt[qt[:, 3] < 0] *= -1.0
            dx[self._qcols] = 2.0 * qt[:, :3].ravel()
        if self._vkeys:
            dx[self._vcols] = np.concatenate([values[k] for k in self._vkeys]) - self._v0
        return dx, qt

    def evaluate(self, values):
        e, J = self.whitened_stacked(values)
        cols = np.cumsum([0] + list(self.prior.dofs))
        return e, [J[:, a:b] for a, b in zip(cols[:-1], cols[1:])], None

    def whitened_residual(self, values):
        dx, _ = self._delta(values)
        return self.prior.A @ dx + self.prior.b

    def whitened_stacked(self, values):
        dx, qt = self._delta(values)
        A = self.prior.A
        J = A.copy()
        if qt is not None:
            # d 2vec([δ/2; 1] ⊗ q) / dδ = q4 I + skew(q_vec), per quaternion block
            D = qt[:, 3, None, None] * np.eye(3) + _skew_batch(qt[:, :3])
            J[:, self._qcols] = np.einsum("mki,kij->mkj", self._Aq, D).reshape(A.shape[0], -1)
        return A @ dx + self.prior.b, J

    @classmethod
    def gaussian(cls, keys, kinds, x0, cov):
        """Prior ``x ~ N(x0, cov)`` on the stacked tangent space of ``keys``."""
        L = np.linalg.cholesky(np.asarray(cov, dtype=float))
        A = np.linalg.inv(L)
        return cls(MarginalPrior(A, np.zeros(A.shape[0]), list(keys), list(kinds), [np.array(x, dtype=float) for x in x0]))


class LinearFactor(Factor):
    """``e = sum_i A_i x_i - b`` over vector variables; handy for tests."""

    kind = "linear"

    def __init__(self, keys, As, b, info=None):
        self.keys = tuple(keys)
        self.As = [np.atleast_2d(np.asarray(A, dtype=float)) for A in As]
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.W = None if info is None else _whitener(np.atleast_2d(info))

    def evaluate(self, values):
        e = -self.b.copy()
        for key, A in zip(self.keys, self.As):
            e = e + A @ np.atleast_1d(values[key])
        return e, list(self.As), self.W


class VisualFactor(Factor):
    """Single inverse-depth observation as a graph factor.

    The feature variable ``fkey`` stores ``[alpha, beta, rho]`` anchored at
    state ``anchor`` in camera ``calib_i``.
    """

    kind = "visual"

    def __init__(self, fkey, anchor, k, calib_i, calib_j, z, sigma, same_cam):
        self.fkey, self.anchor, self.k = fkey, anchor, k
        self.calib_i, self.calib_j = calib_i, calib_j
        self.z = np.asarray(z, dtype=float)
        self.sigma = sigma
        if k == anchor:
            self.case = "i" if same_cam else "ii"
            self.keys = (fkey,)
        else:
            self.case = "iii"
            self.keys = (fkey, ("q", anchor), ("p", anchor), ("q", k), ("p", k))

    def evaluate(self, values):
        a, b, r = values[self.fkey]
        feat = FeatureInvDepth(a, b, max(r, 0.0))
        xa = xk = None
        if self.case == "iii":
            xa = _Pose(values[("q", self.anchor)], values[("p", self.anchor)])
            xk = _Pose(values[("q", self.k)], values[("p", self.k)])
        rb = inverse_depth_factor(self.case, xa, xk, feat, self.calib_i, self.calib_j, self.z, self.sigma)
        if not rb.valid:
            return None, None, None
        return rb.e, [b for _, b in rb.J], np.eye(2) / self.sigma


@dataclass
class _Pose:
    q: np.ndarray
    p: np.ndarray


def pose(q, p):
    """Lightweight pose container accepted wherever an ImuState pose is read."""
    return _Pose(quat_normalize(q), np.asarray(p, dtype=float))


def quat_error(q2, q1):
    return quat_boxminus(q2, q1)
