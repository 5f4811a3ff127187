import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preintvio import factors as F
from preintvio.config import ImuNoiseSpec
from preintvio.manifold import ImuState, exp_quat, quat_boxplus
from preintvio.oracle import (
    FD_ATOL,
    FD_RTOL,
    STEREO_R_CI,
    bias_jacobian_blocks,
    fd_violation,
    imu_residual_blocks,
    inverse_depth_blocks,
    marginal_prior_blocks,
    numerical_jacobian,
    random_factor,
    random_imu_stream,
    random_visual_config,
    relative_pose_blocks,
)
from preintvio.preintegration import BiasLinearization, Model, integrate_samples
from preintvio.estimator import predict

seeds = st.integers(0, 2**32 - 1)


def _assert_blocks(blocks):
    for label, J, J_fd in blocks:
        assert fd_violation(J, J_fd, FD_RTOL, FD_ATOL) <= 1.0, label


@pytest.mark.parametrize("model", list(Model))
@given(seed=seeds)
@settings(max_examples=10, deadline=None)
def test_imu_residual_jacobians(model, seed):
    _assert_blocks(imu_residual_blocks(*random_factor(np.random.default_rng(seed), model)))


@pytest.mark.parametrize("model", list(Model))
@given(seed=seeds)
@settings(max_examples=5, deadline=None)
def test_bias_jacobians(model, seed):
    rng = np.random.default_rng(seed)
    t, wm, am = random_imu_stream(rng)
    lin = BiasLinearization(rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.05, exp_quat(rng.normal(size=3)))
    _assert_blocks(bias_jacobian_blocks(model, lin, t, wm, am))


def test_sign_flipped_hb_is_detected():
    rng = np.random.default_rng(0)
    t, wm, am = random_imu_stream(rng)
    lin = BiasLinearization(np.zeros(3), np.zeros(3), None)

    def faulty(*args, **kwargs):
        f = integrate_samples(*args, **kwargs)
        return dataclasses.replace(f, Hb=-f.Hb)

    blocks = dict((lab, (J, Jn)) for lab, J, Jn in bias_jacobian_blocks("m1", lin, t, wm, am, integrate=faulty))
    assert fd_violation(*blocks["Hb"]) > 1.0
    assert fd_violation(*blocks["Ha"]) <= 1.0


@pytest.mark.parametrize("case", ["i", "ii", "iii"])
@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_inverse_depth_jacobians(case, seed):
    _assert_blocks(inverse_depth_blocks(case, *random_visual_config(np.random.default_rng(seed))))


@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_relative_pose_jacobians(seed):
    rng = np.random.default_rng(seed)
    xk = F.pose(exp_quat(rng.normal(size=3)), rng.normal(size=3))
    xj = F.pose(exp_quat(rng.normal(size=3)), rng.normal(size=3))
    meas = F.RelativePoseMeas(exp_quat(rng.normal(size=3) * 0.1), rng.normal(size=3), np.eye(6) * 1e-4)
    _assert_blocks(relative_pose_blocks(xk, xj, meas))


@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_marginal_prior_jacobians(seed):
    rng = np.random.default_rng(seed)
    x_lin = [exp_quat(rng.normal(size=3)), rng.normal(size=4)]
    prior = F.MarginalPrior(rng.normal(size=(6, 7)), rng.normal(size=6), ["a", "b"], ["quat", "vec"], x_lin)
    values = [quat_boxplus(x_lin[0], rng.normal(size=3) * 0.3), rng.normal(size=4)]
    _assert_blocks(marginal_prior_blocks(prior, values))


def test_prior_factor_matches_marginal_prior_factor():
    rng = np.random.default_rng(1)
    x_lin = [exp_quat(rng.normal(size=3)), rng.normal(size=3), exp_quat(rng.normal(size=3))]
    prior = F.MarginalPrior(rng.normal(size=(8, 9)), rng.normal(size=8), ["a", "b", "c"], ["quat", "vec", "quat"], x_lin)
    vals = {"a": quat_boxplus(x_lin[0], [0.1, 0.2, -0.1]), "b": rng.normal(size=3), "c": quat_boxplus(x_lin[2], [0.3, 0, 0])}
    rb = F.marginal_prior_factor([vals[k] for k in "abc"], prior)
    pf = F.PriorFactor(prior)
    e, Js, W = pf.evaluate(vals)
    assert W is None
    np.testing.assert_allclose(e, rb.e, atol=1e-14)
    for k, J in zip("abc", Js):
        np.testing.assert_allclose(J, rb.jacobian(k), atol=1e-14)
    np.testing.assert_allclose(pf.whitened_residual(vals), e, atol=1e-14)

    def fd(d):
        v = dict(vals)
        v["a"] = quat_boxplus(vals["a"], d)
        return pf.evaluate(v)[0]

    np.testing.assert_allclose(numerical_jacobian(fd, 3), Js[0], atol=1e-8)


def test_marginal_prior_validation():
    with pytest.raises(ValueError):
        F.MarginalPrior(np.zeros((3, 4)), np.zeros(3), ["a"], ["vec"], [np.zeros(3)])
    with pytest.raises(ValueError):
        F.MarginalPrior(np.zeros((4, 3)), np.zeros(4), ["a"], ["vec"], [np.zeros(3)])
    with pytest.raises(ValueError):
        F.MarginalPrior(np.zeros((2, 3)), np.zeros(3), ["a"], ["vec"], [np.zeros(3)])
    prior = F.MarginalPrior(np.eye(3), np.zeros(3), ["a"], ["vec"], [np.zeros(3)])
    with pytest.raises(ValueError):
        F.marginal_prior_factor([], prior)


@pytest.mark.parametrize("model", list(Model))
def test_imu_residual_zero_at_prediction(model):
    rng = np.random.default_rng(2)
    x0, _, f = random_factor(rng, model)
    if model is Model.M2:
        x0 = ImuState(f.lin.q_star, x0.bg, x0.v, x0.ba, x0.p)
    x0 = ImuState(x0.q, f.lin.bg, x0.v, f.lin.ba, x0.p)
    x1 = predict(x0, f)
    np.testing.assert_allclose(F.imu_factor(x0, x1, f).e, 0.0, atol=1e-12)


@pytest.mark.parametrize("model", [Model.M1, Model.M2])
def test_bias_perturbation_absorbed(model):
    # states reintegrated with a shifted bias are explained by the first-order correction
    rng = np.random.default_rng(3)
    t, wm, am = random_imu_stream(rng)
    q0 = exp_quat(rng.normal(size=3))
    lin = BiasLinearization(np.zeros(3), np.zeros(3), q0 if model is Model.M2 else None)
    f = integrate_samples(model, lin, ImuNoiseSpec(), t, wm, am)
    d = rng.normal(size=6)
    d *= 1e-4 / np.linalg.norm(d)
    g = integrate_samples(model, BiasLinearization(d[:3], d[3:], lin.q_star), ImuNoiseSpec(), t, wm, am)
    x0 = ImuState(q0, d[:3], rng.normal(size=3), d[3:], rng.normal(size=3))
    x1 = predict(x0, g)
    assert np.linalg.norm(F.imu_factor(x0, x1, f).e) <= 1e-6


def test_imu_factor_model_checks():
    rng = np.random.default_rng(4)
    x0, x1, f1 = random_factor(rng, Model.M1)
    with pytest.raises(ValueError):
        F.imu_factor_model2(x0, x1, f1)
    _, _, f2 = random_factor(rng, Model.M2)
    with pytest.raises(ValueError):
        F.imu_factor_model1(x0, x1, f2)
    with pytest.raises(ValueError):
        F.ImuFactor(0, 1, dataclasses.replace(f2, lin=BiasLinearization()))


def test_graph_imu_factor_matches_direct_evaluation():
    rng = np.random.default_rng(5)
    x0, x1, f = random_factor(rng, Model.M2)
    fac = F.ImuFactor(0, 1, f)
    values = {}
    for k, x in ((0, x0), (1, x1)):
        for key, v in zip(F.imu_keys(k), (x.q, x.bg, x.v, x.ba, x.p)):
            values[key] = v
    rb = F.imu_factor(x0, x1, f)
    e, Js, W = fac.evaluate(values)
    np.testing.assert_allclose(e, rb.e, atol=1e-14)
    np.testing.assert_allclose(np.hstack(Js[:5]), rb.jacobian("x_k"), atol=1e-14)
    ew, Jw = fac.whitened_stacked(values)
    np.testing.assert_allclose(ew, W @ e, atol=1e-12)
    np.testing.assert_allclose(Jw, W @ np.hstack(Js), atol=1e-12)
    np.testing.assert_allclose(fac.whitened_residual(values), ew, atol=1e-12)
    assert rb.cost() == pytest.approx(0.5 * ew @ ew, rel=1e-9)


def test_projection_center_and_h_proj():
    np.testing.assert_allclose(F.project(np.array([0.0, 0.0, 2.0])), [0.0, 0.0])
    h = np.array([0.3, -0.2, 2.5])
    np.testing.assert_allclose(F.h_proj(h), numerical_jacobian(lambda d: F.project(h + d), 3), atol=1e-9)


def test_inverse_depth_case_i_reprojects_exactly():
    ci = F.ExtrinsicCalib(STEREO_R_CI, np.zeros(3))
    feat = F.FeatureInvDepth(0.1, -0.2, 0.5)
    rb = F.inverse_depth_factor("i", None, None, feat, ci, ci, np.array([0.1, -0.2]))
    np.testing.assert_allclose(rb.e, 0.0, atol=1e-15)


def test_point_at_infinity_is_finite():
    rng = np.random.default_rng(6)
    ci, cj, xa, xk, feat, z = random_visual_config(rng)
    inf = F.FeatureInvDepth(feat.alpha, feat.beta, 0.0)
    rb = F.inverse_depth_factor("iii", xa, xk, inf, ci, cj, z)
    assert np.all(np.isfinite(rb.e))
    with pytest.raises(ValueError):
        F.FeatureInvDepth(0.0, 0.0, -1.0)


def test_relative_pose_zero_at_truth():
    xk = F.pose(exp_quat([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
    xj = F.pose(exp_quat([0.2, -0.1, 0.3]), np.array([1.5, 2.0, 2.0]))
    from preintvio.manifold import quat_inverse, quat_multiply, quat_to_rot

    meas = F.RelativePoseMeas(quat_multiply(xj.q, quat_inverse(xk.q)), quat_to_rot(xk.q) @ (xj.p - xk.p), np.eye(6))
    np.testing.assert_allclose(F.relative_pose_factor(xk, xj, meas).e, 0.0, atol=1e-14)


@pytest.mark.parametrize("cov", [np.eye(5), -np.eye(6), np.triu(np.ones((6, 6)))])
def test_relative_pose_covariance_validation(cov):
    with pytest.raises(ValueError):
        F.RelativePoseMeas(np.array([0, 0, 0, 1.0]), np.zeros(3), cov)


@pytest.mark.parametrize(
    "kind, v, expected",
    [("none", 4.0, (4.0, 1.0)), ("huber", 1.0, (1.0, 1.0)), ("huber", 4.0, (2 * 1.345 * 2 - 1.345**2, 1.345 / 2))],
)
def test_robust_weight_values(kind, v, expected):
    np.testing.assert_allclose(F.robust_weight(kind, v), expected)


@given(st.floats(0.0, 100.0), st.sampled_from(["huber", "cauchy"]))
def test_robust_weight_is_derivative(v, kind):
    cost, w = F.robust_weight(kind, v)
    h = 1e-6
    lo, hi = max(v - h, 0.0), v + h
    slope = (F.robust_weight(kind, hi)[0] - F.robust_weight(kind, lo)[0]) / (hi - lo)
    assert w == pytest.approx(slope, rel=1e-4, abs=1e-6)
    assert cost <= v + 1e-12


@pytest.mark.parametrize("args", [("huber", -1.0), ("tukey", 1.0), ("huber", 1.0, -2.0)])
def test_robust_weight_rejects(args):
    with pytest.raises(ValueError):
        F.robust_weight(*args)


def test_exp_quat_jacobian_fd():
    for theta in (np.array([0.3, -0.2, 0.1]), np.array([1e-5, 2e-5, -1e-5])):
        np.testing.assert_allclose(F.exp_quat_jacobian(theta), numerical_jacobian(lambda d: exp_quat(theta + d), 3), atol=1e-8)
