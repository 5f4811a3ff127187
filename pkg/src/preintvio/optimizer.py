"""Dense on-manifold least squares with Schur elimination and marginalization.

A :class:`FactorGraph` holds named variables (unit quaternions or plain
vectors) and factors from :mod:`preintvio.factors`.  Variables flagged
``eliminate=True`` (landmarks) are removed from the normal equations by a
Schur complement before the dense solve and recovered by back-substitution.
Large sets of visual observations can be attached as *batches*, objects that
linearize many observations at once and hand back their already-reduced
contribution (see :mod:`preintvio.visual`).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .config import SolverConfig
from .factors import Factor, MarginalPrior, PriorFactor, robust_weight
from .manifold import quat_boxplus, quat_multiply_batch, quat_normalize

log = logging.getLogger(__name__)

SINGULAR_REG = 1e-9
EIG_TRUNCATION = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    """Normal equations are singular; ``keys`` lists the unconstrained variables."""

    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"normal equations are rank deficient; unconstrained: {self.keys}")


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = float("nan")
    final_cost: float = float("nan")
    converged: bool = False
    aborted: bool = False
    reason: str = ""
    history: list = field(default_factory=list)


@dataclass
class SolveResult:
    """Output of :func:`solve`.

    ``information`` is the undamped (reduced) normal matrix at the final
    estimate, ordered by ``keys``/``offsets``.
    """

    values: dict
    cost: float
    report: SolveReport
    keys: list
    offsets: dict
    _lin: object = field(default=None, repr=False)
    _info: np.ndarray | None = field(default=None, repr=False)

    @property
    def information(self):
        if self._info is None:
            self._info = self._lin.reduced(0.0)[0]
            self._lin = None
        return self._info

    def covariance(self, keys=None):
        """Marginal covariance of ``keys`` (all non-eliminated variables if None)."""
        if keys is None:
            Sigma = np.linalg.inv(self.information)
            return 0.5 * (Sigma + Sigma.T)
        idx = np.concatenate([np.arange(self.offsets[k][0], self.offsets[k][1]) for k in keys])
        E = np.zeros((self.information.shape[0], idx.size))
        E[idx, np.arange(idx.size)] = 1.0
        Sigma = np.linalg.solve(self.information, E)[idx]
        return 0.5 * (Sigma + Sigma.T)


def _dof(kind, value):
    return 3 if kind == "quat" else int(np.size(value))


def retract(kind, x, d):
    if kind == "quat":
        return quat_boxplus(x, d)
    return x + d


class FactorGraph:
    """Variables, factors and batches of one optimization problem."""

    def __init__(self):
        self.values = {}
        self.kinds = {}
        self.eliminated = set()
        self.factors = []
        self.batches = []

    # -- construction -----------------------------------------------------
    def add_variable(self, key, value, kind="vec", eliminate=False):
        if kind not in ("quat", "vec"):
            raise ValueError(f"unknown variable kind {kind!r}")
        value = quat_normalize(value) if kind == "quat" else np.atleast_1d(np.asarray(value, dtype=float)).copy()
        self.values[key] = value
        self.kinds[key] = kind
        if eliminate:
            self.eliminated.add(key)
        return key

    def add_factor(self, factor: Factor):
        missing = [k for k in factor.keys if k not in self.values]
        if missing:
            raise KeyError(f"factor references unknown variables {missing}")
        self.factors.append(factor)
        return factor

    def add_batch(self, batch):
        self.batches.append(batch)
        return batch

    def remove_variables(self, keys):
        keys = set(keys)
        self.factors = [f for f in self.factors if not keys.intersection(f.keys)]
        for k in keys:
            self.values.pop(k, None)
            self.kinds.pop(k, None)
            self.eliminated.discard(k)

    def dof(self, key):
        return _dof(self.kinds[key], self.values[key])

    @property
    def total_dof(self):
        return sum(self.dof(k) for k in self.values)

    def factors_touching(self, keys):
        keys = set(keys)
        return [f for f in self.factors if keys.intersection(f.keys)]

    def ordering(self, keys=None):
        """Column offsets ``key -> (start, stop)`` with eliminated keys last."""
        keys = list(self.values) if keys is None else list(keys)
        keys = [k for k in keys if k not in self.eliminated] + [k for k in keys if k in self.eliminated]
        offsets = {}
        c = 0
        for k in keys:
            d = self.dof(k)
            offsets[k] = (c, c + d)
            c += d
        return keys, offsets, c

    # -- evaluation ---------------------------------------------------------
    def cost(self, values=None, cfg: SolverConfig | None = None, batch_params=None):
        values = self.values if values is None else values
        robust = {} if cfg is None else cfg.robust
        total = 0.0
        for f in self.factors:
            e = f.whitened_residual(values)
            if e is None:
                continue
            kind, k = robust.get(f.kind, ("none", None))
            total += 0.5 * robust_weight(kind, float(e @ e), k)[0]
        for i, b in enumerate(self.batches):
            total += b.cost(values, None if batch_params is None else batch_params[i])
        return total


def _factor_columns(f, offsets):
    """Column indices of ``f``'s variables, cached per ordering."""
    cache = getattr(f, "_col_cache", None)
    if cache is not None and cache[0] is offsets:
        return cache[1]
    idx = np.concatenate([np.arange(*offsets[key]) for key in f.keys])
    f._col_cache = (offsets, idx)
    return idx


def _accumulate(graph, values, factors, offsets, n, robust):
    H = np.zeros((n, n))
    g = np.zeros(n)
    cost = 0.0
    for f in factors:
        e, J = f.whitened_stacked(values)
        if e is None:
            continue
        kind, k = robust.get(f.kind, ("none", None))
        rho, w = robust_weight(kind, float(e @ e), k)
        cost += 0.5 * rho
        if w != 1.0:
            sw = np.sqrt(w)
            e = sw * e
            J = sw * J
        idx = _factor_columns(f, offsets)
        g[idx] += J.T @ e
        H[np.ix_(idx, idx)] += J.T @ J
    return H, g, cost


def _psd_solve(A, b):
    c = sla.cho_factor(A, lower=True, check_finite=False)
    return sla.cho_solve(c, b, check_finite=False)


def unconstrained_keys(H, keys, offsets, rel_tol=1e-10):
    """Variables with weight on the numerical nullspace of ``H``."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = max(abs(w).max(), 1e-300)
    null = V[:, w <= rel_tol * scale]
    out = []
    for k in keys:
        a, b = offsets[k]
        if a < H.shape[0] and null.size and np.abs(null[a:b]).max() > 1e-6:
            out.append(k)
    return out


class _Linearization:
    """Normal equations at one estimate, ready to be solved for any damping."""

    def __init__(self, graph, values, cfg, keys, offsets, n, batch_params):
        self.graph = graph
        self.values = values
        self.keys = keys
        self.offsets = offsets
        self.n_all = n
        self.n_x = sum(offsets[k][1] - offsets[k][0] for k in keys if k not in graph.eliminated)
        self.batch_params = batch_params
        H, g, cost = _accumulate(graph, values, graph.factors, offsets, n, cfg.robust)
        nx = self.n_x
        self.batch_states = []
        for b, p in zip(graph.batches, batch_params):
            c, Hb, gb, st = b.linearize(values, p, offsets, nx)
            self.batch_states.append(st)
            cost += c
            H[:nx, :nx] += Hb
            g[:nx] += gb
        self.H, self.g, self.cost = H, g, cost

    def gradient_max(self):
        """Largest entry of the full (unreduced) gradient."""
        m = float(np.abs(self.g).max(initial=0.0))
        for b, st in zip(self.graph.batches, self.batch_states):
            m = max(m, b.gradient_max(st))
        return m

    def reduced(self, lam):
        """Damped reduced system ``(S, r)`` and the eliminated-block pieces."""
        nx = self.n_x
        H = self.H
        if lam > 0:
            H = H + lam * np.diag(np.diag(H))
        Hxx = H[:nx, :nx].copy()
        gx = self.g[:nx].copy()
        elim = None
        if self.n_all > nx:
            Hxf = H[:nx, nx:]
            Hff = H[nx:, nx:]
            gf = self.g[nx:]
            c = sla.cho_factor(Hff + SINGULAR_REG * np.eye(Hff.shape[0]), lower=True, check_finite=False)
            HffiHfx = sla.cho_solve(c, Hxf.T, check_finite=False)
            Hffigf = sla.cho_solve(c, gf, check_finite=False)
            Hxx -= Hxf @ HffiHfx
            gx -= Hxf @ Hffigf
            elim = (HffiHfx, Hffigf)
        for b, st in zip(self.graph.batches, self.batch_states):
            Sb, rb = b.reduced(st, lam, nx)
            Hxx += Sb
            gx += rb
        return Hxx, gx, elim

    def step(self, lam):
        S, r, elim = self.reduced(lam)
        dx = _psd_solve(S, -r)
        df = None
        if elim is not None:
            HffiHfx, Hffigf = elim
            df = -Hffigf - HffiHfx @ dx
        dparams = [b.back_substitute(st, dx) for b, st in zip(self.graph.batches, self.batch_states)]
        return dx, df, dparams


def _apply(graph, values, keys, offsets, dx, df, nx):
    out = dict(values)
    quats, steps = [], []
    for k in keys:
        a, b = offsets[k]
        d = df[a - nx : b - nx] if k in graph.eliminated else dx[a:b]
        if graph.kinds[k] == "quat":
            quats.append(k)
            steps.append(d)
        else:
            out[k] = values[k] + d
    if quats:
        Q = np.array([values[k] for k in quats])
        D = np.empty((len(quats), 4))
        D[:, :3] = 0.5 * np.array(steps)
        D[:, 3] = 1.0
        R = quat_multiply_batch(D, Q)
        R /= np.linalg.norm(R, axis=1)[:, None] * np.where(R[:, 3] < 0, -1.0, 1.0)[:, None]
        for k, q in zip(quats, R):
            out[k] = q
    return out


def solve(graph: FactorGraph, cfg: SolverConfig | None = None, check_rank=True) -> SolveResult:
    """Levenberg-Marquardt (or Gauss-Newton) on the manifold.

    Damping scales the diagonal, ``H + λ diag(H)``, with λ multiplied by
    ``lambda_up`` on rejection and ``lambda_down`` on acceptance.  If λ exceeds
    ``lambda_max`` the best estimate so far is returned with
    ``report.aborted`` set.

    Raises:
        RankDeficientError: the undamped reduced system is singular.
    """
    cfg = SolverConfig() if cfg is None else cfg
    keys, offsets, n = graph.ordering()
    values = dict(graph.values)
    params = [b.get_params() for b in graph.batches]
    report = SolveReport()
    lin = _Linearization(graph, values, cfg, keys, offsets, n, params)
    report.initial_cost = lin.cost
    nx = lin.n_x

    if check_rank:
        S, _, _ = lin.reduced(0.0)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise RankDeficientError(unconstrained_keys(S, keys, offsets)) from None

    lam = 0.0 if cfg.gauss_newton else cfg.lambda0
    for it in range(cfg.max_iterations):
        if lin.gradient_max() <= cfg.grad_tol:
            report.converged, report.reason = True, "gradient"
            break
        accepted = False
        while True:
            try:
                dx, df, dparams = lin.step(lam)
            except (np.linalg.LinAlgError, sla.LinAlgError):
                if cfg.gauss_newton:
                    raise RankDeficientError(unconstrained_keys(lin.reduced(0.0)[0], keys, offsets)) from None
                lam *= cfg.lambda_up
                if lam > cfg.lambda_max:
                    break
                continue
            trial = _apply(graph, values, keys, offsets, dx, df, nx)
            trial_params = [b.retract_params(p, d) for b, p, d in zip(graph.batches, params, dparams)]
            new_cost = graph.cost(trial, cfg, trial_params)
            report.history.append({"iteration": it, "lambda": lam, "cost": new_cost, "step": float(np.linalg.norm(dx))})
            if cfg.gauss_newton or new_cost <= lin.cost:
                accepted = True
                lam *= cfg.lambda_down
                break
            lam = max(lam, cfg.lambda0) * cfg.lambda_up
            if lam > cfg.lambda_max:
                break
        report.iterations = it + 1
        if not accepted:
            report.aborted, report.reason = True, "lambda exceeded maximum"
            break
        old_cost = lin.cost
        values, params = trial, trial_params
        lin = _Linearization(graph, values, cfg, keys, offsets, n, params)
        step_norm = np.linalg.norm(dx) if df is None else np.linalg.norm(np.r_[dx, df])
        if step_norm <= cfg.step_tol:
            report.converged, report.reason = True, "step"
            break
        if abs(old_cost - lin.cost) <= cfg.cost_tol * max(old_cost, 1e-300):
            report.converged, report.reason = True, "cost"
            break

    report.final_cost = lin.cost
    graph.values = values
    for b, p in zip(graph.batches, params):
        b.set_params(p)
    # the reduced information matrix is only formed if it is asked for
    return SolveResult(values, lin.cost, report, [k for k in keys if k not in graph.eliminated], offsets, lin)


# ---------------------------------------------------------------------------
# marginalization


def schur_marginal(H, g, marg_idx, keep_idx):
    """``(Λ_marg, g_marg)`` after eliminating ``marg_idx`` from ``(H, g)``.

    A singular ``H_mm`` is regularized by ``1e-9 I`` with a warning.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    m = np.asarray(marg_idx, dtype=int)
    r = np.asarray(keep_idx, dtype=int)
    Hmm = H[np.ix_(m, m)]
    Hrm = H[np.ix_(r, m)]
    if not np.all(np.isfinite(Hmm)) or np.linalg.cond(Hmm) > 1e14:
        warnings.warn("marginalized block is singular; regularizing by 1e-9 I", RuntimeWarning, stacklevel=2)
        Hmm = Hmm + SINGULAR_REG * np.eye(m.size)
    K = np.linalg.solve(Hmm, Hrm.T).T
    L = H[np.ix_(r, r)] - K @ Hrm.T
    return 0.5 * (L + L.T), g[r] - K @ g[m]


def prior_from_information(Lam, g):
    """Square-root factor ``(A_m, b_m)`` with ``A^T A = Λ`` and ``A^T b = g``.

    Eigenvalues below ``1e-10 max`` are truncated, so ``A_m`` may have fewer
    rows than columns.
    """
    w, V = np.linalg.eigh(0.5 * (Lam + Lam.T))
    keep = w > EIG_TRUNCATION * max(w.max(initial=0.0), 1e-300)
    w, V = w[keep], V[:, keep]
    A = np.sqrt(w)[:, None] * V.T
    b = (V.T @ g) / np.sqrt(w)
    return A, b


def marginalize(graph: FactorGraph, marg_keys, batch_select=None, cfg: SolverConfig | None = None):
    """Remove ``marg_keys`` and replace their incident factors by a marginal prior.

    Args:
        marg_keys: variables to eliminate (may include eliminated landmarks).
        batch_select: optional list, one entry per graph batch, of landmark
            selections passed to ``batch.marginal_system``; the selected
            landmarks and all their observations are absorbed as well.

    Returns:
        The inserted :class:`MarginalPrior` (or None if nothing was incident).
    """
    cfg = SolverConfig() if cfg is None else cfg
    marg_keys = list(marg_keys)
    for k in marg_keys:
        if k not in graph.values:
            raise KeyError(f"cannot marginalize unknown variable {k!r}")
    incident = graph.factors_touching(marg_keys)
    keep = []
    for f in incident:
        for k in f.keys:
            if k not in marg_keys and k not in keep:
                keep.append(k)
    batch_sys = []
    if batch_select is not None:
        for b, sel in zip(graph.batches, batch_select):
            if sel is None or len(sel) == 0:
                continue
            bkeys, Hb, gb = b.marginal_system(graph.values, sel)
            for k in bkeys:
                if k not in marg_keys and k not in keep:
                    keep.append(k)
            batch_sys.append((bkeys, Hb, gb))
    if not incident and not batch_sys:
        graph.remove_variables(marg_keys)
        return None

    order = marg_keys + keep
    offsets = {}
    c = 0
    for k in order:
        d = graph.dof(k)
        offsets[k] = (c, c + d)
        c += d
    H, g, _ = _accumulate(graph, graph.values, incident, offsets, c, cfg.robust)
    for bkeys, Hb, gb in batch_sys:
        idx = np.concatenate([np.arange(*offsets[k]) for k in bkeys])
        H[np.ix_(idx, idx)] += Hb
        g[idx] += gb
    nm = offsets[marg_keys[-1]][1] if marg_keys else 0
    Lam, gm = schur_marginal(H, g, np.arange(nm), np.arange(nm, c))
    A, b = prior_from_information(Lam, gm)
    prior = MarginalPrior(
        A,
        b,
        keep,
        [graph.kinds[k] for k in keep],
        [graph.values[k].copy() for k in keep],
    )
    graph.remove_variables(marg_keys)
    if batch_select is not None:
        for b, sel in zip(graph.batches, batch_select):
            if sel is not None and len(sel):
                b.remove_landmarks(sel)
    graph.add_factor(PriorFactor(prior))
    return prior


# ---------------------------------------------------------------------------
# sliding-window policy


@dataclass
class WindowPolicy:
    inertial_window: int = 6
    pose_window: int = 8


@dataclass
class WindowState:
    """State ids in the inertial sub-window (full 15-DOF) and pose sub-window."""

    inertial: list = field(default_factory=list)
    poses: list = field(default_factory=list)


@dataclass
class MarginalizationRequest:
    """``kind`` is ``"inertial"`` ({v, b_ω, b_a} of ``state``) or ``"pose"``."""

    kind: str
    state: object
    keys: list
    landmarks: list = field(default_factory=list)


def window_advance(window: WindowState, new_id, policy: WindowPolicy | None = None, anchored=None):
    """Append ``new_id`` and report what must be marginalized.

    Args:
        anchored: optional mapping ``state id -> landmark ids`` anchored there;
            used to fill the pose request's landmark list.

    Returns:
        ``(new window, edits, requests)`` where ``edits`` is a list of
        ``(action, state id)`` tuples and ``requests`` holds at most one
        inertial and one pose :class:`MarginalizationRequest`, in execution
        order.
    """
    policy = WindowPolicy() if policy is None else policy
    anchored = {} if anchored is None else anchored
    inertial = list(window.inertial) + [new_id]
    poses = list(window.poses)
    edits = [("add_state", new_id)]
    requests = []
    if len(inertial) > policy.inertial_window:
        old = inertial.pop(0)
        poses.append(old)
        edits.append(("demote", old))
        requests.append(MarginalizationRequest("inertial", old, [("v", old), ("bg", old), ("ba", old)]))
    if len(poses) > policy.pose_window:
        old = poses.pop(0)
        edits.append(("remove_pose", old))
        requests.append(
            MarginalizationRequest("pose", old, [("q", old), ("p", old)], list(anchored.get(old, [])))
        )
    return WindowState(inertial, poses), edits, requests
