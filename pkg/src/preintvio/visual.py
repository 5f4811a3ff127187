"""Batched inverse-depth observations with in-kernel landmark elimination.

:class:`VisualBatch` stores landmarks and their stereo observations and
plugs into :func:`preintvio.optimizer.solve` as a *batch*: it adds its
pose-pose normal equations directly and removes every landmark with a
3x3 Schur complement, so the landmarks never enter the dense system.  The
per-observation math matches :func:`preintvio.factors.inverse_depth_factor`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import q2rot

ROBUST_CODES = {"none": 0, "huber": 1, "cauchy": 2}
INVALID_COST = 1e6
_H3_MIN = 1e-8


@njit(cache=True)
def _robust(code, v, k):
    if code == 1:
        if v < k * k:
            return v, 1.0
        r = np.sqrt(v)
        return 2.0 * k * r - k * k, k / r
    if code == 2:
        k2 = k * k
        return k2 * np.log1p(v / k2), 1.0 / (1.0 + v / k2)
    return v, 1.0


@njit(cache=True)
def _prepare(Q, Rc, pc, Rk, RR, Rji, pji):
    """Per-slot rotations ``Rk[s]``, ``RR[s, c] = R_CcI Rk[s]`` and stereo pairs."""
    S = Q.shape[0]
    C = Rc.shape[0]
    for s in range(S):
        Rk[s] = q2rot(Q[s])
        for c in range(C):
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += Rc[c, i, k] * Rk[s, k, j]
                    RR[s, c, i, j] = acc
    for ci in range(C):
        for cj in range(C):
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += Rc[cj, i, k] * Rc[ci, j, k]
                    Rji[ci, cj, i, j] = acc
            for i in range(3):
                acc = pc[cj, i]
                for k in range(3):
                    acc -= Rji[ci, cj, i, k] * pc[ci, k]
                pji[ci, cj, i] = acc


@njit(cache=True)
def _evaluate(
    Q, P, cmap, params, aslot, acam, ostart, oslot, ocam, oz, Rc, pc, isig, rcode, rk, sel, want_jac, Hxx, gx, Hff, gf, Hxf, touched
):
    """Robust cost of all selected observations, optionally with normal equations.

    With ``want_jac`` the pose-pose blocks go into ``Hxx``/``gx`` through
    ``cmap`` (6 global columns ``[θ, p]`` per slot, ``-1`` for a fixed slot)
    and each landmark's ``Hff``, ``gf`` and per-slot ``Hxf`` rows are filled.
    Invalid observations (point at or behind the camera) add ``INVALID_COST``.
    """
    L = params.shape[0]
    S = Q.shape[0]
    C = Rc.shape[0]
    Rk = np.empty((S, 3, 3))
    RR = np.empty((S, C, 3, 3))
    Rji = np.empty((C, C, 3, 3))
    pji = np.empty((C, C, 3))
    _prepare(Q, Rc, pc, Rk, RR, Rji, pji)
    u = np.empty(3)
    du = np.empty((3, 3))
    Ma = np.empty((3, 3))
    t = np.empty(3)
    y = np.empty(3)
    h = np.empty(3)
    D = np.empty((3, 15))
    J = np.empty((2, 15))
    e = np.empty(2)
    loc = np.empty(12, dtype=np.int64)
    cost = 0.0
    for l in range(L):
        if want_jac:
            Hff[l] = 0.0
            gf[l] = 0.0
            touched[l] = False
        if not sel[l]:
            continue
        a = aslot[l]
        ci = acam[l]
        al = params[l, 0]
        be = params[l, 1]
        rho = params[l, 2]
        # anchor-frame quantities: w = R_IC (m - rho p_CI), u = R_GA w
        m0 = al - rho * pc[ci, 0]
        m1 = be - rho * pc[ci, 1]
        m2 = 1.0 - rho * pc[ci, 2]
        w0 = Rc[ci, 0, 0] * m0 + Rc[ci, 1, 0] * m1 + Rc[ci, 2, 0] * m2
        w1 = Rc[ci, 0, 1] * m0 + Rc[ci, 1, 1] * m1 + Rc[ci, 2, 1] * m2
        w2 = Rc[ci, 0, 2] * m0 + Rc[ci, 1, 2] * m1 + Rc[ci, 2, 2] * m2
        for i in range(3):
            # Rk[a]^T rows give R_GA
            u[i] = Rk[a, 0, i] * w0 + Rk[a, 1, i] * w1 + Rk[a, 2, i] * w2
        for i in range(3):
            # d u / d(alpha, beta, rho)
            dwa = (Rc[ci, 0, 0], Rc[ci, 0, 1], Rc[ci, 0, 2])
            dwb = (Rc[ci, 1, 0], Rc[ci, 1, 1], Rc[ci, 1, 2])
            q0 = -(Rc[ci, 0, 0] * pc[ci, 0] + Rc[ci, 1, 0] * pc[ci, 1] + Rc[ci, 2, 0] * pc[ci, 2])
            q1 = -(Rc[ci, 0, 1] * pc[ci, 0] + Rc[ci, 1, 1] * pc[ci, 1] + Rc[ci, 2, 1] * pc[ci, 2])
            q2 = -(Rc[ci, 0, 2] * pc[ci, 0] + Rc[ci, 1, 2] * pc[ci, 1] + Rc[ci, 2, 2] * pc[ci, 2])
            du[i, 0] = Rk[a, 0, i] * dwa[0] + Rk[a, 1, i] * dwa[1] + Rk[a, 2, i] * dwa[2]
            du[i, 1] = Rk[a, 0, i] * dwb[0] + Rk[a, 1, i] * dwb[1] + Rk[a, 2, i] * dwb[2]
            du[i, 2] = Rk[a, 0, i] * q0 + Rk[a, 1, i] * q1 + Rk[a, 2, i] * q2
            # Ma = R_GA [w]x
            r0 = Rk[a, 0, i]
            r1 = Rk[a, 1, i]
            r2 = Rk[a, 2, i]
            Ma[i, 0] = r1 * w2 - r2 * w1
            Ma[i, 1] = -r0 * w2 + r2 * w0
            Ma[i, 2] = r0 * w1 - r1 * w0
        for o in range(ostart[l], ostart[l + 1]):
            s = oslot[o]
            c = ocam[o]
            if s == a:
                if c == ci:
                    h[0] = al
                    h[1] = be
                    h[2] = 1.0
                    if want_jac:
                        for i in range(3):
                            for j in range(3):
                                D[i, j] = 1.0 if (i == j and j < 2) else 0.0
                else:
                    for i in range(3):
                        h[i] = Rji[ci, c, i, 0] * al + Rji[ci, c, i, 1] * be + Rji[ci, c, i, 2] + rho * pji[ci, c, i]
                        if want_jac:
                            D[i, 0] = Rji[ci, c, i, 0]
                            D[i, 1] = Rji[ci, c, i, 1]
                            D[i, 2] = pji[ci, c, i]
                full = False
            else:
                for i in range(3):
                    t[i] = u[i] + rho * (P[a, i] - P[s, i])
                for i in range(3):
                    y[i] = Rk[s, i, 0] * t[0] + Rk[s, i, 1] * t[1] + Rk[s, i, 2] * t[2]
                    h[i] = RR[s, c, i, 0] * t[0] + RR[s, c, i, 1] * t[1] + RR[s, c, i, 2] * t[2] + rho * pc[c, i]
                full = True
            if h[2] <= _H3_MIN:
                cost += INVALID_COST
                continue
            inv3 = 1.0 / h[2]
            x0 = h[0] * inv3
            x1 = h[1] * inv3
            e[0] = (x0 - oz[o, 0]) * isig
            e[1] = (x1 - oz[o, 1]) * isig
            v = e[0] * e[0] + e[1] * e[1]
            rhoc, wt = _robust(rcode, v, rk)
            cost += 0.5 * rhoc
            if not want_jac:
                continue
            ncol = 3
            if full:
                ncol = 15
                for i in range(3):
                    for j in range(3):
                        Rij = RR[s, c, i, j]
                        # feature
                        D[i, j] = 0.0
                        # pa / pk
                        D[i, 6 + j] = rho * Rij
                        D[i, 12 + j] = -rho * Rij
                    for j in range(3):
                        acc = 0.0
                        acc2 = 0.0
                        for k in range(3):
                            acc += RR[s, c, i, k] * du[k, j]
                            acc2 += RR[s, c, i, k] * Ma[k, j]
                        D[i, j] = acc
                        D[i, 3 + j] = -acc2
                    D[i, 2] += RR[s, c, i, 0] * (P[a, 0] - P[s, 0]) + RR[s, c, i, 1] * (P[a, 1] - P[s, 1]) + RR[s, c, i, 2] * (P[a, 2] - P[s, 2]) + pc[c, i]
                    # theta_k: R_CI [y]x
                    D[i, 9] = Rc[c, i, 1] * y[2] - Rc[c, i, 2] * y[1]
                    D[i, 10] = -Rc[c, i, 0] * y[2] + Rc[c, i, 2] * y[0]
                    D[i, 11] = Rc[c, i, 0] * y[1] - Rc[c, i, 1] * y[0]
            sc = isig
            if wt != 1.0:
                sw = np.sqrt(wt)
                e[0] *= sw
                e[1] *= sw
                sc *= sw
            for j in range(ncol):
                J[0, j] = (D[0, j] - x0 * D[2, j]) * inv3 * sc
                J[1, j] = (D[1, j] - x1 * D[2, j]) * inv3 * sc
            for i in range(3):
                gf[l, i] += J[0, i] * e[0] + J[1, i] * e[1]
                for j in range(3):
                    Hff[l, i, j] += J[0, i] * J[0, j] + J[1, i] * J[1, j]
            if not full:
                continue
            touched[l, a] = True
            touched[l, s] = True
            for r in range(6):
                loc[r] = 6 * a + r
                loc[6 + r] = 6 * s + r
            for r in range(12):
                for j in range(3):
                    Hxf[l, loc[r], j] += J[0, 3 + r] * J[0, j] + J[1, 3 + r] * J[1, j]
            if cmap[a, 0] < 0 and cmap[s, 0] < 0:
                continue
            for r in range(12):
                gr = cmap[a, r] if r < 6 else cmap[s, r - 6]
                if gr < 0:
                    continue
                gx[gr] += J[0, 3 + r] * e[0] + J[1, 3 + r] * e[1]
                for c2 in range(12):
                    gc = cmap[a, c2] if c2 < 6 else cmap[s, c2 - 6]
                    if gc < 0:
                        continue
                    Hxx[gr, gc] += J[0, 3 + r] * J[0, 3 + c2] + J[1, 3 + r] * J[1, 3 + c2]
    return cost


@njit(cache=True)
def _inv3(A, lam, reg, M):
    a = A[0, 0] * (1.0 + lam) + reg
    e_ = A[1, 1] * (1.0 + lam) + reg
    i_ = A[2, 2] * (1.0 + lam) + reg
    b, c, d, f, g, h = A[0, 1], A[0, 2], A[1, 0], A[1, 2], A[2, 0], A[2, 1]
    c00 = e_ * i_ - f * h
    c01 = -(d * i_ - f * g)
    c02 = d * h - e_ * g
    det = a * c00 + b * c01 + c * c02
    inv = 1.0 / det
    M[0, 0] = c00 * inv
    M[1, 0] = c01 * inv
    M[2, 0] = c02 * inv
    M[0, 1] = -(b * i_ - c * h) * inv
    M[1, 1] = (a * i_ - c * g) * inv
    M[2, 1] = -(a * h - b * g) * inv
    M[0, 2] = (b * f - c * e_) * inv
    M[1, 2] = -(a * f - c * d) * inv
    M[2, 2] = (a * e_ - b * d) * inv


@njit(cache=True)
def _schur(cmap, Hff, gf, Hxf, touched, sel, lam, reg, S_out, r_out, Minv):
    """Subtract each landmark's Schur term from ``S_out``/``r_out``.

    The upper triangle of the slot-space complement is accumulated locally
    and scattered into the global columns once at the end.
    """
    L = Hff.shape[0]
    S = touched.shape[1]
    W = np.zeros((6 * S, 6 * S))
    BM = np.empty((6 * S, 3))
    Mg = np.empty(3)
    slots = np.empty(S, dtype=np.int64)
    for l in range(L):
        if not sel[l]:
            continue
        M = Minv[l]
        _inv3(Hff[l], lam, reg, M)
        for i in range(3):
            Mg[i] = M[i, 0] * gf[l, 0] + M[i, 1] * gf[l, 1] + M[i, 2] * gf[l, 2]
        m = 0
        for s in range(S):
            if touched[l, s] and cmap[s, 0] >= 0:
                slots[m] = s
                m += 1
        for a in range(m):
            base = 6 * slots[a]
            for r in range(6):
                row = base + r
                h0, h1, h2 = Hxf[l, row, 0], Hxf[l, row, 1], Hxf[l, row, 2]
                for j in range(3):
                    BM[row, j] = h0 * M[0, j] + h1 * M[1, j] + h2 * M[2, j]
                r_out[cmap[slots[a], r]] -= h0 * Mg[0] + h1 * Mg[1] + h2 * Mg[2]
        for a in range(m):
            ba = 6 * slots[a]
            for b in range(a, m):
                bb = 6 * slots[b]
                for r in range(6):
                    b0, b1, b2 = BM[ba + r, 0], BM[ba + r, 1], BM[ba + r, 2]
                    for c in range(6):
                        W[ba + r, bb + c] += b0 * Hxf[l, bb + c, 0] + b1 * Hxf[l, bb + c, 1] + b2 * Hxf[l, bb + c, 2]
    for sa in range(S):
        if cmap[sa, 0] < 0:
            continue
        for sb in range(sa, S):
            if cmap[sb, 0] < 0:
                continue
            for r in range(6):
                ga = cmap[sa, r]
                for c in range(6):
                    gb = cmap[sb, c]
                    w = W[6 * sa + r, 6 * sb + c]
                    if sa == sb:
                        S_out[ga, gb] -= w
                    else:
                        S_out[ga, gb] -= w
                        S_out[gb, ga] -= w


@njit(cache=True)
def _back_substitute(cmap, gf, Hxf, touched, sel, Minv, dx, out):
    L = gf.shape[0]
    S = touched.shape[1]
    r = np.empty(3)
    for l in range(L):
        out[l, :] = 0.0
        if not sel[l]:
            continue
        for j in range(3):
            r[j] = gf[l, j]
        for s in range(S):
            if touched[l, s] and cmap[s, 0] >= 0:
                for k in range(6):
                    d = dx[cmap[s, k]]
                    for j in range(3):
                        r[j] += Hxf[l, 6 * s + k, j] * d
        for i in range(3):
            out[l, i] = -(Minv[l, i, 0] * r[0] + Minv[l, i, 1] * r[1] + Minv[l, i, 2] * r[2])


class VisualBatch:
    """Inverse-depth landmarks and their observations.

    Args:
        calibs: camera extrinsics, indexed by camera id.
        sigma: normalized-coordinate measurement standard deviation.
        robust: ``"none"``, ``"huber"`` or ``"cauchy"`` (weights applied to the
            whitened residual).
    """

    kind = "visual"

    def __init__(self, calibs, sigma, robust="none", k=1.345):
        self.Rc = np.ascontiguousarray([c.R_CI for c in calibs], dtype=float)
        self.pc = np.ascontiguousarray([c.p_CI for c in calibs], dtype=float)
        self.isig = 1.0 / sigma
        self.rcode = ROBUST_CODES[robust]
        self.rk = float(k)
        self.landmarks = {}  # id -> dict(anchor, cam, params)
        # observations live in flat arrays (landmark id, state id, camera, z)
        self._olid = np.zeros(0, dtype=np.int64)
        self._osid = np.zeros(0, dtype=np.int64)
        self._ocam = np.zeros(0, dtype=np.int64)
        self._oz = np.zeros((0, 2))
        self._pending = []
        self._dummy1 = np.zeros(0)
        self._dummy2 = np.zeros((0, 0))
        self._dummy3 = np.zeros((0, 3, 3))
        self._pack = None

    # -- bookkeeping --------------------------------------------------------
    def add_landmark(self, lid, anchor, cam, params):
        if lid in self.landmarks:
            raise KeyError(f"landmark {lid} already exists")
        self.landmarks[lid] = {"anchor": anchor, "cam": cam, "params": np.asarray(params, dtype=float).copy()}
        self._pack = None

    def add_observation(self, lid, sid, cam, z):
        if lid not in self.landmarks:
            raise KeyError(f"unknown landmark {lid}")
        self._pending.append((lid, sid, cam, float(z[0]), float(z[1])))
        self._pack = None

    def _flush(self):
        if self._pending:
            new = np.array(self._pending, dtype=float).reshape(-1, 5)
            self._olid = np.r_[self._olid, new[:, 0].astype(np.int64)]
            self._osid = np.r_[self._osid, new[:, 1].astype(np.int64)]
            self._ocam = np.r_[self._ocam, new[:, 2].astype(np.int64)]
            self._oz = np.r_[self._oz, new[:, 3:]]
            self._pending = []

    def _keep_obs(self, mask):
        self._olid, self._osid, self._ocam, self._oz = self._olid[mask], self._osid[mask], self._ocam[mask], self._oz[mask]
        self._pack = None

    def observations(self, lid):
        """``[(state, camera, z)]`` of one landmark in insertion order."""
        self._flush()
        idx = np.flatnonzero(self._olid == lid)
        return [(int(self._osid[i]), int(self._ocam[i]), self._oz[i].copy()) for i in idx]

    def anchored_at(self, sid):
        return [lid for lid, lm in self.landmarks.items() if lm["anchor"] == sid]

    def remove_landmarks(self, lids):
        for lid in lids:
            self.landmarks.pop(lid, None)
        self._flush()
        self._keep_obs(~np.isin(self._olid, np.fromiter(lids, dtype=np.int64)))

    def drop_state(self, sid):
        """Remove all observations made from state ``sid``."""
        self._flush()
        self._keep_obs(self._osid != sid)

    def params_of(self, lid):
        return self.landmarks[lid]["params"].copy()

    @property
    def num_observations(self):
        return self._olid.size + len(self._pending)

    # -- packing ------------------------------------------------------------
    def _build(self):
        self._flush()
        lids = list(self.landmarks)
        L = len(lids)
        lid_arr = np.array(lids, dtype=np.int64)
        anchors = np.fromiter((lm["anchor"] for lm in self.landmarks.values()), dtype=np.int64, count=L)
        acam = np.fromiter((lm["cam"] for lm in self.landmarks.values()), dtype=np.int64, count=L)
        order = np.argsort(lid_arr, kind="stable")
        pos = order[np.searchsorted(lid_arr[order], self._olid)] if L else np.zeros(0, dtype=np.int64)
        perm = np.argsort(pos, kind="stable")
        ostart = np.zeros(L + 1, dtype=np.int64)
        np.cumsum(np.bincount(pos, minlength=L), out=ostart[1:])
        sid_arr = np.unique(np.r_[anchors, self._osid])
        self._pack = {
            "lids": lids,
            "sids": [int(x) for x in sid_arr],
            "aslot": np.searchsorted(sid_arr, anchors).astype(np.int64),
            "acam": acam,
            "ostart": ostart,
            "oslot": np.ascontiguousarray(np.searchsorted(sid_arr, self._osid[perm]), dtype=np.int64),
            "ocam": np.ascontiguousarray(self._ocam[perm]),
            "oz": np.ascontiguousarray(self._oz[perm]),
        }
        return self._pack

    @property
    def pack(self):
        return self._pack if self._pack is not None else self._build()

    def _poses(self, values, sids):
        Q = np.ascontiguousarray([values[("q", s)] for s in sids], dtype=float).reshape(-1, 4)
        P = np.ascontiguousarray([values[("p", s)] for s in sids], dtype=float).reshape(-1, 3)
        return Q, P

    def _cols(self, offsets, sids):
        cmap = np.full((len(sids), 6), -1, dtype=np.int64)
        for i, s in enumerate(sids):
            kq, kp = ("q", s), ("p", s)
            if kq in offsets:
                cmap[i, :3] = np.arange(*offsets[kq])
                cmap[i, 3:] = np.arange(*offsets[kp])
        return cmap

    # -- optimizer protocol -------------------------------------------------
    def get_params(self):
        pk = self.pack
        return np.array([self.landmarks[l]["params"] for l in pk["lids"]], dtype=float).reshape(-1, 3)

    def set_params(self, params):
        for lid, p in zip(self.pack["lids"], params):
            self.landmarks[lid]["params"] = np.array(p)

    @staticmethod
    def retract_params(params, d):
        out = params + d
        out[:, 2] = np.maximum(out[:, 2], 0.0)
        return out

    def _run_linearize(self, values, params, offsets, n, sel):
        pk = self.pack
        Q, P = self._poses(values, pk["sids"])
        cols = self._cols(offsets, pk["sids"])
        L, S = params.shape[0], len(pk["sids"])
        Hxx = np.zeros((n, n))
        gx = np.zeros(n)
        Hff = np.zeros((L, 3, 3))
        gf = np.zeros((L, 3))
        Hxf = np.zeros((L, 6 * S, 3))
        touched = np.zeros((L, S), dtype=np.bool_)
        cost = _evaluate(
            Q, P, cols, params, pk["aslot"], pk["acam"], pk["ostart"], pk["oslot"], pk["ocam"], pk["oz"],
            self.Rc, self.pc, self.isig, self.rcode, self.rk, sel, True, Hxx, gx, Hff, gf, Hxf, touched,
        )
        return cost, Hxx, gx, (cols, Hff, gf, Hxf, touched, sel)

    def linearize(self, values, params, offsets, n):
        """Linearize every observation.

        Returns:
            ``(cost, H_add, g_add, state)``: the pose-block contribution over
            the first ``n`` columns and an opaque state for :meth:`reduced`,
            :meth:`back_substitute` and :meth:`gradient_max`.
        """
        sel = np.ones(params.shape[0], dtype=np.bool_)
        cost, Hxx, gx, lin = self._run_linearize(values, params, offsets, n, sel)
        return cost, Hxx, gx, {"lin": lin, "Minv": np.zeros_like(lin[1])}

    @staticmethod
    def gradient_max(state):
        """Largest landmark-gradient magnitude of a linearization."""
        return float(np.abs(state["lin"][2]).max(initial=0.0))

    @staticmethod
    def reduced(state, lam, nx):
        """Landmark Schur complement ``(S, r)`` for damping ``lam``."""
        cols, Hff, gf, Hxf, touched, sel = state["lin"]
        S = np.zeros((nx, nx))
        r = np.zeros(nx)
        _schur(cols, Hff, gf, Hxf, touched, sel, lam, 1e-12, S, r, state["Minv"])
        return S, r

    @staticmethod
    def back_substitute(state, dx):
        """Landmark steps for pose step ``dx`` (uses the last :meth:`reduced` damping)."""
        cols, Hff, gf, Hxf, touched, sel = state["lin"]
        out = np.zeros_like(gf)
        _back_substitute(cols, gf, Hxf, touched, sel, state["Minv"], np.ascontiguousarray(dx), out)
        return out

    def cost(self, values, params=None):
        pk = self.pack
        if params is None:
            params = np.array([self.landmarks[l]["params"] for l in pk["lids"]], dtype=float).reshape(-1, 3)
        if params.shape[0] == 0:
            return 0.0
        Q, P = self._poses(values, pk["sids"])
        L, S = params.shape[0], len(pk["sids"])
        sel = np.ones(L, dtype=np.bool_)
        cmap = np.full((S, 6), -1, dtype=np.int64)
        return _evaluate(
            Q, P, cmap, params, pk["aslot"], pk["acam"], pk["ostart"], pk["oslot"], pk["ocam"], pk["oz"],
            self.Rc, self.pc, self.isig, self.rcode, self.rk, sel, False,
            self._dummy2, self._dummy1, self._dummy3, self._dummy1.reshape(0, 3), self._dummy3, np.zeros((0, 0), dtype=np.bool_),
        )

    def marginal_system(self, values, lids):
        """Pose-only normal equations of ``lids`` and their observations.

        Returns:
            ``(keys, H, g)`` with the landmarks already eliminated; ``keys``
            alternate ``("q", s), ("p", s)`` for every touched state.
        """
        pk = self.pack
        lids = set(lids)
        sel = np.array([l in lids for l in pk["lids"]], dtype=np.bool_)
        obs_sids = self._osid[np.isin(self._olid, np.fromiter(lids, dtype=np.int64))]
        touched_sids = sorted({self.landmarks[l]["anchor"] for l in lids} | {int(x) for x in obs_sids})
        keys = []
        offsets = {}
        for i, s in enumerate(touched_sids):
            offsets[("q", s)] = (6 * i, 6 * i + 3)
            offsets[("p", s)] = (6 * i + 3, 6 * i + 6)
            keys += [("q", s), ("p", s)]
        n = 6 * len(touched_sids)
        params = np.array([self.landmarks[l]["params"] for l in pk["lids"]], dtype=float).reshape(-1, 3)
        _, Hxx, gx, lin = self._run_linearize(values, params, offsets, n, sel)
        cols, Hff, gf, Hxf, touched, sel = lin
        Minv = np.zeros_like(Hff)
        _schur(cols, Hff, gf, Hxf, touched, sel, 0.0, 1e-12, Hxx, gx, Minv)
        return keys, 0.5 * (Hxx + Hxx.T), gx
