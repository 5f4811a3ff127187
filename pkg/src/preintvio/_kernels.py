"""Numba kernels for the inner preintegration loop.

Everything here works on plain float64 arrays and mirrors the public helpers
in :mod:`preintvio.manifold`; the tests check both agree.  The closed-form
coefficient functions switch to power series below ``SERIES_X`` because the
direct trigonometric forms lose up to ``eps / x**6`` relative accuracy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

M1 = 0
M2 = 1
DISCRETE = 2

SMALL_ANGLE = 1e-7
SERIES_X = 1.0
_NTERMS = 12


def _series(offset):
    # a_k = (-1)^k / (2k + offset)!
    return np.array(
        [(-1.0) ** k / math.factorial(2 * k + offset) for k in range(_NTERMS)]
    )


_F1 = _series(2)  # (1 - cos x) / x^2
_F2 = _series(3)  # (x - sin x) / x^3
_F3 = _series(4)  # (x^2/2 - 1 + cos x) / x^4


@njit(cache=True)
def _poly_even(c, x2):
    acc = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        acc = acc * x2 + c[k]
    return acc


@njit(cache=True)
def _dpoly_even_over_x(c, x2):
    # d/dx (sum c_k x^2k) / x = sum 2k c_k x^(2k-2)
    acc = 0.0
    for k in range(c.shape[0] - 1, 0, -1):
        acc = acc * x2 + 2.0 * k * c[k]
    return acc


@njit(cache=True)
def coeffs(x):
    """Return ``(f1, f2, f3, g1, g2, g3)`` at ``x = |w| dt``.

    ``f1 = (1-cos x)/x^2``, ``f2 = (x-sin x)/x^3``, ``f3 = (x^2/2-1+cos x)/x^4``
    and ``g_i = f_i'(x)/x``.
    """
    if x < SERIES_X:
        x2 = x * x
        return (
            _poly_even(_F1, x2),
            _poly_even(_F2, x2),
            _poly_even(_F3, x2),
            _dpoly_even_over_x(_F1, x2),
            _dpoly_even_over_x(_F2, x2),
            _dpoly_even_over_x(_F3, x2),
        )
    s = math.sin(x)
    c = math.cos(x)
    omc = 2.0 * math.sin(0.5 * x) ** 2
    x2 = x * x
    f1 = omc / x2
    f2 = (x - s) / (x2 * x)
    f3 = (0.5 * x2 - omc) / (x2 * x2)
    g1 = (x * s - 2.0 * omc) / (x2 * x2)
    g2 = (x * omc - 3.0 * x + 3.0 * s) / (x2 * x2 * x)
    g3 = (x * (x - s) - 2.0 * x2 + 4.0 * omc) / (x2 * x2 * x2)
    return f1, f2, f3, g1, g2, g3


@njit(cache=True)
def skew(v):
    S = np.zeros((3, 3))
    S[0, 1] = -v[2]
    S[0, 2] = v[1]
    S[1, 0] = v[2]
    S[1, 2] = -v[0]
    S[2, 0] = -v[1]
    S[2, 1] = v[0]
    return S


@njit(cache=True)
def qmul(q, p):
    """JPL product without renormalization."""
    r = np.empty(4)
    r[0] = q[3] * p[0] + q[2] * p[1] - q[1] * p[2] + q[0] * p[3]
    r[1] = -q[2] * p[0] + q[3] * p[1] + q[0] * p[2] + q[1] * p[3]
    r[2] = q[1] * p[0] - q[0] * p[1] + q[3] * p[2] + q[2] * p[3]
    r[3] = -q[0] * p[0] - q[1] * p[1] - q[2] * p[2] + q[3] * p[3]
    return r


@njit(cache=True)
def qnormalize(q):
    n = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    if q[3] < 0.0:
        n = -n
    return q / n


@njit(cache=True)
def q2rot(q):
    x, y, z, w = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 2 * w * w - 1 + 2 * x * x
    R[0, 1] = 2 * w * z + 2 * x * y
    R[0, 2] = -2 * w * y + 2 * x * z
    R[1, 0] = -2 * w * z + 2 * x * y
    R[1, 1] = 2 * w * w - 1 + 2 * y * y
    R[1, 2] = 2 * w * x + 2 * y * z
    R[2, 0] = 2 * w * y + 2 * x * z
    R[2, 1] = -2 * w * x + 2 * y * z
    R[2, 2] = 2 * w * w - 1 + 2 * z * z
    return R


@njit(cache=True)
def expq(phi):
    t = math.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    q = np.empty(4)
    if t < SMALL_ANGLE:
        t2 = t * t
        s = 0.5 * (1.0 - t2 / 24.0)
        c = 1.0 - t2 / 8.0
    else:
        s = math.sin(0.5 * t) / t
        c = math.cos(0.5 * t)
    q[0] = s * phi[0]
    q[1] = s * phi[1]
    q[2] = s * phi[2]
    q[3] = c
    return qnormalize(q)


@njit(cache=True)
def so3exp(phi):
    t = math.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    K = skew(phi)
    if t < SMALL_ANGLE:
        t2 = t * t
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = math.sin(t) / t
        b = 2.0 * math.sin(0.5 * t) ** 2 / (t * t)
    return np.eye(3) + a * K + b * (K @ K)


@njit(cache=True)
def jr(phi):
    t = math.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    K = skew(phi)
    if t < SMALL_ANGLE:
        t2 = t * t
        c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c1 = 2.0 * math.sin(0.5 * t) ** 2 / (t * t)
        c2 = (t - math.sin(t)) / (t * t * t)
    return np.eye(3) - c1 * K + c2 * (K @ K)


@njit(cache=True)
def rot_integrals(w, dt):
    """Closed-form rotation integrals and their derivatives w.r.t. ``w``.

    Returns ``(Bt, At, n, cB, cA)`` where ``Bt = int_0^dt Exp(w s) ds``,
    ``At = int_0^dt int_0^s Exp(w u) du ds`` and ``cB``/``cA`` hold
    ``(coef1, coef2, dcoef1/dn / n, dcoef2/dn / n)`` of the ``[w]`` and
    ``[w]^2`` terms, needed for the bias derivatives.
    """
    n = math.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2)
    x = n * dt
    f1, f2, f3, g1, g2, g3 = coeffs(x)
    dt2 = dt * dt
    dt3 = dt2 * dt
    dt4 = dt2 * dt2
    K = skew(w)
    K2 = K @ K
    cB = np.array([dt2 * f1, dt3 * f2, dt4 * g1, dt4 * dt * g2])
    cA = np.array([dt3 * f2, dt4 * f3, dt4 * dt * g2, dt4 * dt2 * g3])
    Bt = dt * np.eye(3) + cB[0] * K + cB[1] * K2
    At = 0.5 * dt2 * np.eye(3) + cA[0] * K + cA[1] * K2
    return Bt, At, n, cB, cA


@njit(cache=True)
def d_integral_times(w, a, c):
    """Derivative w.r.t. ``w`` of ``(c0 [w] + c1 [w]^2) a`` with ``c = c(|w|)``."""
    K = skew(w)
    Ka = K @ a
    KKa = K @ Ka
    wa = w[0] * a[0] + w[1] * a[1] + w[2] * a[2]
    D = -c[0] * skew(a) + c[1] * (wa * np.eye(3) + np.outer(w, a) - 2.0 * np.outer(a, w))
    D += np.outer(Ka, w) * c[2] + np.outer(KKa, w) * c[3]
    return D


@njit(cache=True)
def _phi_blocks(Rku, w, a, h, gt, with_clone, Phi):
    """Exact transition over ``h`` seconds starting at rotation ``Rku``."""
    Bt, At, n, cB, cA = rot_integrals(w, h)
    Phi[:, :] = 0.0
    for i in range(Phi.shape[0]):
        Phi[i, i] = 1.0
    Phi[0:3, 0:3] = so3exp(-w * h)
    Phi[0:3, 3:6] = -jr(w * h) * h
    Phi[6:9, 0:3] = -Rku @ skew(Bt @ a)
    Phi[6:9, 3:6] = -Rku @ d_integral_times(w, a, cB)
    Phi[6:9, 9:12] = -Rku @ Bt
    Phi[12:15, 0:3] = -Rku @ skew(At @ a)
    Phi[12:15, 3:6] = -Rku @ d_integral_times(w, a, cA)
    Phi[12:15, 6:9] = h * np.eye(3)
    Phi[12:15, 9:12] = -Rku @ At
    if with_clone:
        Sg = skew(gt)
        Phi[6:9, 15:18] = -Rku @ Bt @ Sg
        Phi[12:15, 15:18] = -Rku @ At @ Sg


@njit(cache=True)
def _noise_Q(Phi_h, qc, dt, Q):
    # Q = dt * sum_c sigma_c^2 Phi_h[:, c] Phi_h[:, c]^T over the 4 noise blocks
    N = Q.shape[0]
    Q[:, :] = 0.0
    for blk in range(4):
        s2 = qc[blk]
        if s2 == 0.0:
            continue
        for c in range(3 * blk, 3 * blk + 3):
            for i in range(N):
                pic = Phi_h[i, c]
                if pic == 0.0:
                    continue
                for j in range(N):
                    Q[i, j] += s2 * dt * pic * Phi_h[j, c]


@njit(cache=True)
def step(model, st_q, st_v, P, Jm, wm, am, bg, ba, gk, dt, qc, with_cov):
    """Advance one IMU interval in place.

    ``st_v`` holds ``[alpha, beta]``; ``Jm`` is a ``(7, 3, 3)`` stack
    ``[Jq, Ja, Jb, Ha, Hb, Oa, Ob]``; ``qc = [s_g^2, s_wg^2, s_a^2, s_wa^2]``.
    Returns the updated quaternion.
    """
    w = wm - bg
    a = am - ba
    Rtk = q2rot(st_q)
    Rkt = Rtk.T.copy()
    gt = np.zeros(3)
    if model == M2:
        gt = Rtk @ gk
        a = a - gt
    Jq = Jm[0].copy()
    Jb_old = Jm[2].copy()
    Hb_old = Jm[4].copy()
    Ob_old = Jm[6].copy()
    if model == DISCRETE:
        A = 0.5 * dt * dt * Rkt
        B = dt * Rkt
        Sa = skew(a)
        dAa = 0.5 * dt * dt * (Rkt @ Sa @ Jq)
        dBa = dt * (Rkt @ Sa @ Jq)
    else:
        Bt, At, n, cB, cA = rot_integrals(w, dt)
        A = Rkt @ At
        B = Rkt @ Bt
        dBa = Rkt @ skew(Bt @ a) @ Jq - Rkt @ d_integral_times(w, a, cB)
        dAa = Rkt @ skew(At @ a) @ Jq - Rkt @ d_integral_times(w, a, cA)
    if model == M2:
        Sg = skew(gt)
        dBa += B @ Sg @ Jq
        dAa += A @ Sg @ Jq
        RSgk = Rtk @ skew(gk)
        Jm[5] += Ob_old * dt - A @ RSgk
        Jm[6] -= B @ RSgk
    # mean
    al = st_v[0:3].copy()
    be = st_v[3:6].copy()
    st_v[0:3] = al + be * dt + A @ a
    st_v[3:6] = be + B @ a
    # Jacobians (old values on the right-hand side)
    Jm[1] += Jb_old * dt + dAa
    Jm[2] += dBa
    Jm[3] += Hb_old * dt - A
    Jm[4] -= B
    Jm[0] = so3exp(-w * dt) @ Jq + jr(w * dt) * dt
    # covariance
    if with_cov:
        N = P.shape[0]
        clone = model == M2
        Phi = np.zeros((N, N))
        if model == DISCRETE:
            for i in range(N):
                Phi[i, i] = 1.0
            Phi[0:3, 0:3] -= skew(w) * dt
            Phi[0:3, 3:6] = -dt * np.eye(3)
            Phi[6:9, 0:3] = -dt * (Rkt @ skew(a))
            Phi[6:9, 9:12] = -dt * Rkt
            Phi[12:15, 6:9] = dt * np.eye(3)
            Q = np.zeros((N, N))
            for blk in range(4):
                for c in range(3 * blk, 3 * blk + 3):
                    Q[c, c] = qc[blk] * dt
        else:
            _phi_blocks(Rkt, w, a, dt, gt, clone, Phi)
            Rkm = Rkt @ so3exp(w * (0.5 * dt))
            Phi_h = np.zeros((N, N))
            _phi_blocks(Rkm, w, a, 0.5 * dt, gt, clone, Phi_h)
            Q = np.zeros((N, N))
            _noise_Q(Phi_h, qc, dt, Q)
        Pn = Phi @ P @ Phi.T + Q
        Pn = 0.5 * (Pn + Pn.T)
        if clone:
            # Gamma: clone the current orientation error into the last block
            Pn[15:18, :] = Pn[0:3, :]
            Pn[:, 15:18] = Pn[:, 0:3]
        P[:, :] = Pn
    return qnormalize(qmul(expq(w * dt), st_q))


@njit(cache=True)
def integrate(model, q, v, P, Jm, wms, ams, dts, bg, ba, gk, qc, with_cov):
    """Run :func:`step` over a batch of samples; returns the final quaternion."""
    for i in range(dts.shape[0]):
        q = step(model, q, v, P, Jm, wms[i], ams[i], bg, ba, gk, dts[i], qc, with_cov)
    return q


@njit(cache=True)
def qleft(q):
    L = np.empty((4, 4))
    w = q[3]
    L[0, 0] = w
    L[0, 1] = q[2]
    L[0, 2] = -q[1]
    L[1, 0] = -q[2]
    L[1, 1] = w
    L[1, 2] = q[0]
    L[2, 0] = q[1]
    L[2, 1] = -q[0]
    L[2, 2] = w
    for i in range(3):
        L[i, 3] = q[i]
        L[3, i] = -q[i]
    L[3, 3] = w
    return L


@njit(cache=True)
def qright(q):
    M = np.empty((4, 4))
    w = q[3]
    M[0, 0] = w
    M[0, 1] = -q[2]
    M[0, 2] = q[1]
    M[1, 0] = q[2]
    M[1, 1] = w
    M[1, 2] = -q[0]
    M[2, 0] = -q[1]
    M[2, 1] = q[0]
    M[2, 2] = w
    for i in range(3):
        M[i, 3] = q[i]
        M[3, i] = -q[i]
    M[3, 3] = w
    return M


@njit(cache=True)
def qinv(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


@njit(cache=True)
def expq_jacobian(theta):
    n = math.sqrt(theta[0] ** 2 + theta[1] ** 2 + theta[2] ** 2)
    if n < 1e-3:
        n2 = n * n
        s = 0.5 - n2 / 48.0 + n2 * n2 / 3840.0
        ds = -1.0 / 24.0 + n2 / 960.0
    else:
        s = math.sin(0.5 * n) / n
        ds = (0.5 * n * math.cos(0.5 * n) - math.sin(0.5 * n)) / n**3
    D = np.empty((4, 3))
    for i in range(3):
        for j in range(3):
            D[i, j] = ds * theta[i] * theta[j]
        D[i, i] += s
        D[3, i] = -0.5 * s * theta[i]
    return D


@njit(cache=True)
def dq_left(q):
    """``q_4 I + [q_vec]x``."""
    return q[3] * np.eye(3) + skew(q[:3])


@njit(cache=True)
def imu_residual(model2, x0, x1, fq, falpha, fbeta, Jm, lin_bg, lin_ba, qstar, g, dT, want_jac, e, Jk, Jk1):
    """IMU residual; states are packed ``[q(4), bg, v, ba, p]`` (16 values).

    ``Jm`` stacks ``[Jq, Ja, Jb, Ha, Hb, Oa, Ob]``.  Jacobian blocks are
    written into ``Jk``/``Jk1`` when ``want_jac`` is set.
    """
    q0 = x0[0:4]
    q1 = x1[0:4]
    dbg = x0[4:7] - lin_bg
    dba = x0[10:13] - lin_ba
    Rk = q2rot(q0)
    Jq, Ja, Jb, Ha, Hb, Oa, Ob = Jm[0], Jm[1], Jm[2], Jm[3], Jm[4], Jm[5], Jm[6]
    theta = Jq @ dbg
    qb = expq(theta)
    q_n = qmul(q1, qinv(q0))
    q_r = qmul(q_n, qinv(fq))
    q_rb = qmul(q_r, qb)
    sg = 1.0 if q_rb[3] >= 0 else -1.0
    q_rb = sg * q_rb
    v0 = x0[7:10]
    dv = x1[7:10] - v0
    dp = x1[13:16] - x0[13:16] - v0 * dT
    if not model2:
        dv = dv + g * dT
        dp = dp + 0.5 * g * dT * dT
    mv = Rk @ dv
    mp = Rk @ dp
    e[0:3] = 2.0 * q_rb[0:3]
    e[3:6] = x1[4:7] - x0[4:7]
    e[6:9] = mv - Jb @ dbg - Hb @ dba - fbeta
    e[9:12] = x1[10:13] - x0[10:13]
    e[12:15] = mp - Ja @ dbg - Ha @ dba - falpha
    qt = np.zeros(4)
    if model2:
        qt = qmul(q0, qinv(qstar))
        if qt[3] < 0:
            qt = -qt
        dth = 2.0 * qt[0:3]
        e[6:9] -= Ob @ dth
        e[12:15] -= Oa @ dth
    if not want_jac:
        return
    Jk[:, :] = 0.0
    Jk1[:, :] = 0.0
    I3 = np.eye(3)
    q_mb = qmul(qinv(fq), qb)
    LR = qleft(q_n) @ qright(q_mb)
    Jk[0:3, 0:3] = -sg * LR[0:3, 0:3]
    Lr = np.ascontiguousarray(qleft(q_r)[0:3, :])
    Jk[0:3, 3:6] = sg * 2.0 * (Lr @ expq_jacobian(theta)) @ Jq
    Jk1[0:3, 0:3] = dq_left(q_rb)
    Jk[3:6, 3:6] = -I3
    Jk1[3:6, 3:6] = I3
    Jk[6:9, 0:3] = skew(mv)
    Jk[6:9, 3:6] = -Jb
    Jk[6:9, 6:9] = -Rk
    Jk[6:9, 9:12] = -Hb
    Jk1[6:9, 6:9] = Rk
    Jk[9:12, 9:12] = -I3
    Jk1[9:12, 9:12] = I3
    Jk[12:15, 0:3] = skew(mp)
    Jk[12:15, 3:6] = -Ja
    Jk[12:15, 6:9] = -Rk * dT
    Jk[12:15, 9:12] = -Ha
    Jk[12:15, 12:15] = -Rk
    Jk1[12:15, 12:15] = Rk
    if model2:
        D = dq_left(qt)
        Jk[6:9, 0:3] -= Ob @ D
        Jk[12:15, 0:3] -= Oa @ D
