"""JPL quaternions, SO(3) helpers and the 15-DOF IMU state manifold.

Conventions
-----------
* Quaternions are stored ``[qx, qy, qz, qw]`` (vector part first) and follow
  the JPL convention: ``quat_to_rot(q)`` is the *passive* rotation from the
  reference frame into the body frame, and products compose like the
  matrices, ``R(q ⊗ p) = R(q) R(p)``.
* Every quaternion returned by this module is unit norm with ``qw >= 0``.
* Error-state ordering for :class:`ImuState` is ``[θ, b_ω, v, b_a, p]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np
from scipy.spatial.transform import Rotation

SMALL_ANGLE = 1e-7

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[3] < 0.0:
        q = -q
    return q


def quat_left(q):
    """Matrix ``L(q)`` with ``q ⊗ p = L(q) p``."""
    v, w = q[:3], q[3]
    L = np.empty((4, 4))
    L[:3, :3] = w * np.eye(3) - skew(v)
    L[:3, 3] = v
    L[3, :3] = -v
    L[3, 3] = w
    return L


def quat_right(q):
    """Matrix ``R(q)`` with ``p ⊗ q = R(q) p``."""
    v, w = q[:3], q[3]
    M = np.empty((4, 4))
    M[:3, :3] = w * np.eye(3) + skew(v)
    M[:3, 3] = v
    M[3, :3] = -v
    M[3, 3] = w
    return M


def _qprod(q, p):
    """Unnormalized JPL product ``q ⊗ p = L(q) p`` in scalar arithmetic."""
    x1, y1, z1, w1 = q[0], q[1], q[2], q[3]
    x2, y2, z2, w2 = p[0], p[1], p[2], p[3]
    return np.array(
        [
            w1 * x2 + w2 * x1 - (y1 * z2 - z1 * y2),
            w1 * y2 + w2 * y1 - (z1 * x2 - x1 * z2),
            w1 * z2 + w2 * z1 - (x1 * y2 - y1 * x2),
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_multiply_batch(Q, P):
    """Row-wise unnormalized JPL products ``Q[i] ⊗ P[i]`` for ``(n, 4)`` arrays."""
    qv, qw = Q[:, :3], Q[:, 3:]
    pv, pw = P[:, :3], P[:, 3:]
    out = np.empty(np.broadcast_shapes(Q.shape, P.shape))
    out[:, :3] = qw * pv + pw * qv - np.cross(qv, pv)
    out[:, 3] = qw[:, 0] * pw[:, 0] - np.einsum("ij,ij->i", qv, pv)
    return out


def quat_multiply(q, p):
    """JPL product ``q ⊗ p``, renormalized."""
    r = _qprod(q, p)
    n = math.sqrt(r @ r)
    return r / (n if r[3] >= 0.0 else -n)


def quat_inverse(q):
    q = np.asarray(q, dtype=float)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_rot(q):
    q = np.asarray(q, dtype=float)
    v, w = q[:3], q[3]
    return (2.0 * w * w - 1.0) * np.eye(3) - 2.0 * w * skew(v) + 2.0 * np.outer(v, v)


def rot_to_quat(R):
    # JPL R(q) is the transpose of the Hamilton matrix with the same components
    return quat_normalize(Rotation.from_matrix(np.asarray(R).T).as_quat())


def exp_quat(phi):
    """Unit quaternion of the rotation vector ``phi`` (exact, not ``[phi/2; 1]``)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return quat_normalize(np.r_[0.5 * phi * (1.0 - t2 / 24.0), 1.0 - t2 / 8.0])
    return quat_normalize(np.r_[np.sin(0.5 * theta) / theta * phi, np.cos(0.5 * theta)])


def so3_exp(phi):
    """Rodrigues formula ``Exp(phi)``; note ``quat_to_rot(exp_quat(phi)) == so3_exp(-phi)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return np.eye(3) + (1.0 - t2 / 6.0) * K + (0.5 - t2 / 24.0) * K @ K
    return (
        np.eye(3)
        + np.sin(theta) / theta * K
        + (1.0 - np.cos(theta)) / theta**2 * K @ K
    )


def so3_right_jacobian(phi):
    r"""Right Jacobian of SO(3).

    .. math:: J_r(\phi) = I - \frac{1-\cos\theta}{\theta^2}[\phi]_\times
              + \frac{\theta-\sin\theta}{\theta^3}[\phi]_\times^2

    A fourth-order Taylor expansion of both coefficients is used below
    ``SMALL_ANGLE``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c1 = (1.0 - np.cos(theta)) / theta**2
        c2 = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - c1 * K + c2 * K @ K


def quat_integrate_zeroth_order(q, omega, dt):
    """Propagate ``q`` under constant body rate ``omega`` for ``dt`` seconds."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return quat_multiply(exp_quat(np.asarray(omega, dtype=float) * dt), q)


def quat_boxplus(q, dtheta):
    d = np.asarray(dtheta, dtype=float)
    return quat_multiply((0.5 * d[0], 0.5 * d[1], 0.5 * d[2], 1.0), q)


def quat_boxminus(q2, q1):
    """``2 vec(q2 ⊗ q1^{-1})`` on the short arc."""
    return 2.0 * quat_multiply(q2, quat_inverse(q1))[:3]


def rotation_angle(q):
    """Rotation angle (rad) of a unit quaternion."""
    q = quat_normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[:3]), abs(q[3]))


def _vec(x, n=3):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != n:
        raise ValueError(f"expected {n} values, got {x.size}")
    return x.copy()


@dataclass
class ImuState:
    """IMU navigation state ``[q, b_ω, v, b_a, p]`` (16 values, 15 DOF).

    ``q`` is the JPL quaternion of the global-to-IMU rotation.
    """

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    DOF = 15

    def __post_init__(self):
        self.q = quat_normalize(_vec(self.q, 4))
        self.bg = _vec(self.bg)
        self.v = _vec(self.v)
        self.ba = _vec(self.ba)
        self.p = _vec(self.p)

    @property
    def R(self):
        return quat_to_rot(self.q)

    def copy(self):
        return ImuState(self.q, self.bg, self.v, self.ba, self.p)

    def boxplus(self, dx):
        dx = np.asarray(dx, dtype=float)
        if dx.shape != (15,):
            raise ValueError(f"ImuState error vector must have 15 entries, got {dx.shape}")
        return ImuState(
            quat_boxplus(self.q, dx[0:3]),
            self.bg + dx[3:6],
            self.v + dx[6:9],
            self.ba + dx[9:12],
            self.p + dx[12:15],
        )

    def boxminus(self, other):
        """Error vector ``self ⊟ other``."""
        return np.concatenate(
            [
                quat_boxminus(self.q, other.q),
                self.bg - other.bg,
                self.v - other.v,
                self.ba - other.ba,
                self.p - other.p,
            ]
        )

    def to_vector(self):
        return np.concatenate([self.q, self.bg, self.v, self.ba, self.p])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:4], x[4:7], x[7:10], x[10:13], x[13:16])


def boxplus(x, dx):
    """Retraction for an :class:`ImuState` or a plain vector."""
    if isinstance(x, ImuState):
        return x.boxplus(dx)
    x = np.asarray(x, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if x.shape != dx.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {dx.shape}")
    return x + dx


def boxminus(x2, x1):
    if isinstance(x2, ImuState):
        return x2.boxminus(x1)
    x2 = np.asarray(x2, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x2.shape} vs {x1.shape}")
    return x2 - x1
