import copy

import numpy as np
import pytest

from preintvio.config import SolverConfig
from preintvio.factors import PriorFactor, VisualFactor
from preintvio.manifold import exp_quat, quat_boxplus, quat_to_rot
from preintvio.optimizer import FactorGraph, marginalize, solve
from preintvio.simulator import stereo_calibs
from preintvio.visual import VisualBatch

SIGMA = 2e-3
N_STATES, N_LANDMARKS = 4, 15


def _problem(robust, seed=3):
    """The same stereo bundle adjustment as per-observation factors and as a batch."""
    rng = np.random.default_rng(seed)
    cal = stereo_calibs()
    qs = [exp_quat(rng.normal(size=3) * 0.05) for _ in range(N_STATES)]
    ps = [rng.normal(size=3) * 0.3 for _ in range(N_STATES)]
    pts = [np.array([8.0, 0.0, 0.0]) + rng.normal(size=3) * [1.5, 2.0, 1.0] for _ in range(N_LANDMARKS)]

    def cam_point(s, c, P):
        return cal[c].R_CI @ (quat_to_rot(qs[s]) @ (P - ps[s])) + cal[c].p_CI

    generic, batched = FactorGraph(), FactorGraph()
    init = {}
    for s in range(N_STATES):
        init[("q", s)] = quat_boxplus(qs[s], rng.normal(size=3) * 0.01)
        init[("p", s)] = ps[s] + rng.normal(size=3) * 0.05
    for G in (generic, batched):
        for s in range(N_STATES):
            G.add_variable(("q", s), init[("q", s)], "quat")
            G.add_variable(("p", s), init[("p", s)])
        G.add_factor(PriorFactor.gaussian([("q", 0), ("p", 0)], ["quat", "vec"], [qs[0], ps[0]], np.eye(6) * 1e-6))
    vb = VisualBatch(cal, SIGMA, robust, 1.345)
    batched.add_batch(vb)
    for lid, P in enumerate(pts):
        a = lid % 2
        pc = cam_point(a, 0, P)
        f = np.r_[pc[:2] / pc[2], 1 / pc[2]] * (1 + 0.05 * rng.normal(size=3))
        generic.add_variable(("f", lid), f, eliminate=True)
        vb.add_landmark(lid, a, 0, f)
        for s in range(a, N_STATES):
            for c in (0, 1):
                pc = cam_point(s, c, P)
                z = pc[:2] / pc[2] + rng.normal(size=2) * SIGMA
                generic.add_factor(VisualFactor(("f", lid), a, s, cal[0], cal[c], z, SIGMA, c == 0))
                vb.add_observation(lid, s, c, z)
    robust_cfg = {} if robust == "none" else {"visual": (robust, 1.345)}
    return generic, batched, vb, SolverConfig(robust=robust_cfg, max_iterations=20)


@pytest.mark.parametrize("robust", ["none", "huber", "cauchy"])
def test_batch_matches_generic_factors(robust):
    generic, batched, vb, cfg = _problem(robust)
    assert generic.cost(cfg=cfg) == pytest.approx(batched.cost(cfg=cfg), rel=1e-12)
    r1, r2 = solve(generic, cfg), solve(batched, cfg)
    assert r1.cost == pytest.approx(r2.cost, rel=1e-9)
    for k in r2.values:
        np.testing.assert_allclose(r1.values[k], r2.values[k], atol=1e-9)
    for lid in range(N_LANDMARKS):
        np.testing.assert_allclose(r1.values[("f", lid)], vb.params_of(lid), atol=1e-9)
    scale = np.abs(r1.information).max()
    np.testing.assert_allclose(r1.information, r2.information, atol=1e-9 * scale)


def test_batch_marginal_system_matches_generic_marginalization():
    generic, batched, _, cfg = _problem("none")
    solve(generic, cfg)
    batched.values = dict((k, v) for k, v in generic.values.items() if k[0] != "f")
    vb = batched.batches[0]
    vb.set_params(np.array([generic.values[("f", l)] for l in vb.pack["lids"]]))
    anchored = [lid for lid in range(N_LANDMARKS) if lid % 2 == 0]
    p1 = marginalize(generic, [("q", 0), ("p", 0)] + [("f", l) for l in anchored], cfg=cfg)
    p2 = marginalize(batched, [("q", 0), ("p", 0)], [anchored], cfg=cfg)
    off, c = {}, 0
    for k in p1.keys:
        off[k] = c
        c += 3
    perm = np.concatenate([np.arange(off[k], off[k] + 3) for k in p2.keys])
    L1, g1 = p1.A.T @ p1.A, p1.A.T @ p1.b
    L2, g2 = p2.A.T @ p2.A, p2.A.T @ p2.b
    np.testing.assert_allclose(L1[np.ix_(perm, perm)], L2, atol=1e-8 * np.abs(L2).max())
    np.testing.assert_allclose(g1[perm], g2, atol=1e-8 * np.abs(g2).max())
    assert all(vb.observations(l) == [] for l in anchored)


def test_bookkeeping():
    vb = VisualBatch(stereo_calibs(), SIGMA)
    vb.add_landmark(0, 1, 0, [0.1, 0.2, 0.3])
    vb.add_landmark(1, 2, 0, [0.0, 0.0, 0.1])
    with pytest.raises(KeyError):
        vb.add_landmark(0, 1, 0, [0.0, 0.0, 0.1])
    with pytest.raises(KeyError):
        vb.add_observation(7, 1, 0, [0.0, 0.0])
    vb.add_observation(0, 1, 0, [0.1, 0.2])
    vb.add_observation(0, 2, 1, [0.3, 0.4])
    vb.add_observation(1, 2, 0, [0.0, 0.0])
    assert vb.num_observations == 3
    assert [(s, c) for s, c, _ in vb.observations(0)] == [(1, 0), (2, 1)]
    assert vb.anchored_at(2) == [1]
    vb.drop_state(2)
    assert vb.num_observations == 1
    vb.remove_landmarks([0])
    assert vb.num_observations == 0 and list(vb.landmarks) == [1]


def test_retraction_keeps_inverse_depth_non_negative():
    out = VisualBatch.retract_params(np.array([[0.0, 0.0, 0.1]]), np.array([[0.1, 0.1, -1.0]]))
    assert out[0, 2] == 0.0


def test_batch_survives_deepcopy():
    _, batched, _, cfg = _problem("none")
    other = copy.deepcopy(batched)
    assert other.cost(cfg=cfg) == pytest.approx(batched.cost(cfg=cfg), rel=1e-14)
