import numpy as np
import pytest

from cosgp.covariance import KernelConfig, build_CB, build_cross_cov
from cosgp.errors import UnknownGroup
from cosgp.model import FlatBeta, GaussianBeta, HyperParams, ModelContext, PriorSpec
from cosgp.posterior import (
    PredictionSet,
    PredictiveDraws,
    aggregate_totals,
    compose,
    conditional_precision,
    omega_pred_moments,
    predict,
    sample_beta_omega,
    sample_omega_pred,
    sample_y_pred,
    summarize,
)
from cosgp.sampler import McmcConfig, run_chains
from cosgp.supports import FineGrid, SupportRegion, compute_weights

from conftest import random_instance


def kalman_oracle(ctx, th):
    """Posterior of (beta, omega_B) by conditioning the joint Gaussian in covariance form."""
    k, n = ctx.n_coef, ctx.n_b
    beta = ctx.prior.beta
    S = np.zeros((k + n, k + n))
    S[:k, :k] = beta.cov
    S[k:, k:] = th.sigma2 * ctx.C_B(th.phi)
    mu0 = np.concatenate([beta.mean, np.zeros(n)])
    A = np.hstack([ctx.HX, np.eye(n)])
    R = np.diag(th.tau2 * ctx.D_h_diag)
    K = S @ A.T @ np.linalg.inv(A @ S @ A.T + R)
    return mu0 + K @ (ctx.y - A @ mu0), S - K @ A @ S


def _three_region_ctx(seed=0, prior=None):
    rng = np.random.default_rng(seed)
    grid, regs = random_instance(rng, nx=5, ny=5, n_b=3, p=1, max_pix=5, cell=0.2)
    y = rng.normal(1, 1, 3)
    prior = prior or PriorSpec(GaussianBeta([0.5, -0.2], [[2.0, 0.3], [0.3, 1.0]]))
    return ModelContext.build(grid, compute_weights(grid, regs), y, prior, gamma=0.6), grid, regs


def test_conditional_moments_match_kalman_form():
    ctx, _, _ = _three_region_ctx()
    th = HyperParams(1.3, 0.4, 3.0)
    Minv, m = conditional_precision(ctx, th)
    mean, cov = kalman_oracle(ctx, th)
    np.testing.assert_allclose(np.linalg.solve(Minv, m), mean, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(np.linalg.inv(Minv), cov, rtol=1e-9, atol=1e-12)


def test_composition_draws_mean_and_covariance():
    ctx, _, _ = _three_region_ctx(1)
    th = HyperParams(0.9, 0.5, 4.0)
    mean, cov = kalman_oracle(ctx, th)
    rng = np.random.default_rng(42)
    N = 50_000
    X = np.array([np.concatenate(sample_beta_omega(ctx, th, rng)) for _ in range(N)])
    se = np.sqrt(np.diag(cov) / N)
    assert np.all(np.abs(X.mean(axis=0) - mean) < 3 * se)
    emp = np.cov(X, rowvar=False)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


def test_flat_beta_conditional_matches_gls():
    ctx, _, _ = _three_region_ctx(2, PriorSpec(FlatBeta()))
    th = HyperParams(1.0, 0.6, 2.0)
    X, y = ctx.HX, ctx.y
    SC = th.sigma2 * ctx.C_B(th.phi)
    Si = np.linalg.inv(SC + np.diag(th.tau2 * ctx.D_h_diag))
    cov_b = np.linalg.inv(X.T @ Si @ X)
    b_hat = cov_b @ X.T @ Si @ y
    G = SC @ Si @ X
    mean = np.concatenate([b_hat, SC @ Si @ (y - X @ b_hat)])
    cov_w = SC - SC @ Si @ SC + G @ cov_b @ G.T
    cov = np.block([[cov_b, -(G @ cov_b).T], [-G @ cov_b, cov_w]])
    Minv, m = conditional_precision(ctx, th)
    np.testing.assert_allclose(np.linalg.solve(Minv, m), mean, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(np.linalg.inv(Minv), cov, rtol=1e-8, atol=1e-12)


def test_vanishing_sill_gives_weighted_least_squares():
    ctx, _, _ = _three_region_ctx(3)
    th = HyperParams(1e-10, 0.7, 3.0)
    b = ctx.prior.beta
    W = np.diag(1.0 / (th.tau2 * ctx.D_h_diag))
    wls = np.linalg.solve(ctx.HX.T @ W @ ctx.HX + b.precision, ctx.HX.T @ W @ ctx.y + b.precision @ b.mean)
    Minv, m = conditional_precision(ctx, th)
    np.testing.assert_allclose(np.linalg.solve(Minv, m)[:2], wls, rtol=1e-6)
    beta, omega = sample_beta_omega(ctx, th, np.random.default_rng(0))
    assert np.max(np.abs(omega)) < 1e-4


def test_omega_pred_matches_dense_formula():
    rng = np.random.default_rng(4)
    grid, regs = random_instance(rng, nx=6, ny=6, n_b=5, max_pix=5, cell=0.15)
    obs, pred = compute_weights(grid, regs[:3]), compute_weights(grid, regs[3:])
    cfg = KernelConfig(3.0, 0.6)
    CB = build_CB(grid, obs, cfg).matrix
    CBU = build_cross_cov(grid, obs, pred, cfg).matrix
    CUU = build_CB(grid, pred, cfg).matrix
    th = HyperParams(1.7, 0.3, 3.0)
    w = rng.normal(0, 1, 3)
    mean, cov = omega_pred_moments(w, th, CB, CBU, CUU)
    Ci = np.linalg.inv(CB)
    np.testing.assert_allclose(mean, CBU.T @ Ci @ w, rtol=1e-10)
    np.testing.assert_allclose(cov, th.sigma2 * (CUU - CBU.T @ Ci @ CBU), rtol=1e-9, atol=1e-12)


def test_omega_pred_at_observed_support_is_exact():
    rng = np.random.default_rng(5)
    grid, regs = random_instance(rng, nx=6, ny=6, n_b=3, max_pix=6, cell=0.15)
    obs, pred = compute_weights(grid, regs), compute_weights(grid, [regs[2]])
    cfg = KernelConfig(2.0, 0.6)
    CB = build_CB(grid, obs, cfg).matrix
    CBU = build_cross_cov(grid, obs, pred, cfg).matrix
    CUU = build_CB(grid, pred, cfg).matrix
    w = rng.normal(0, 1, 3)
    mean, cov = omega_pred_moments(w, HyperParams(2.0, 1.0, 2.0), CB, CBU, CUU)
    assert mean[0] == pytest.approx(w[2], abs=1e-10)
    assert cov[0, 0] <= 1e-10


def test_omega_pred_reverts_to_prior_beyond_taper():
    grid = FineGrid.regular(20, 1, 0.1)
    obs = compute_weights(grid, [SupportRegion.from_pixels("a", [0, 1])])
    pred = compute_weights(grid, [SupportRegion.from_pixels("u", [15, 16, 17])])
    cfg = KernelConfig(5.0, 0.6)
    CB = build_CB(grid, obs, cfg).matrix
    CBU = build_cross_cov(grid, obs, pred, cfg).matrix
    CUU = build_CB(grid, pred, cfg).matrix
    th = HyperParams(2.5, 1.0, 5.0)
    mean, cov = omega_pred_moments(np.array([3.0]), th, CB, CBU, CUU)
    assert mean[0] == 0.0
    assert cov[0, 0] == pytest.approx(2.5 * CUU[0, 0], rel=1e-14)
    draws = [sample_omega_pred(np.array([3.0]), th, CB, CBU, CUU, np.random.default_rng(i))[0]
             for i in range(2000)]
    assert np.var(draws) == pytest.approx(2.5 * CUU[0, 0], rel=0.1)


def test_y_pred_noise_variance_for_38_pixel_unit():
    grid = FineGrid.regular(38, 1, 1.0)
    pm = compute_weights(grid, [SupportRegion.from_pixels("O", range(38))])
    assert pm.D_h_diag[0] == pytest.approx(1 / 38, abs=1e-15)
    design = np.asarray(pm.H @ grid.design)
    rng = np.random.default_rng(6)
    y = np.array([sample_y_pred([0.0], [0.0], 1.0, pm, design, rng)[0] for _ in range(20_000)])
    assert np.var(y) == pytest.approx(1 / 38, rel=0.05)


def test_y_pred_zero_noise_is_mean():
    grid = FineGrid.regular(3, 1, 1.0, predictors=[1.0, 2.0, 4.0])
    pm = compute_weights(grid, [SupportRegion.from_pixels("u", [0, 2])])
    design = np.asarray(pm.H @ grid.design)
    out = sample_y_pred([0.5], [1.0, 2.0], 0.0, pm, design, np.random.default_rng(0))
    assert out[0] == 1.0 + 2.0 * 2.5 + 0.5


def test_y_pred_single_pixel_standard_normal():
    grid = FineGrid.regular(1, 1, 1.0)
    pm = compute_weights(grid, [SupportRegion.from_pixels("u", [0])])
    design = np.asarray(pm.H @ grid.design)
    rng = np.random.default_rng(7)
    y = np.array([sample_y_pred([0.0], [0.0], 1.0, pm, design, rng)[0] for _ in range(10_000)])
    assert 0.95 <= np.var(y) <= 1.05


def test_y_pred_shape_mismatch():
    grid = FineGrid.regular(2, 1, 1.0)
    pm = compute_weights(grid, [SupportRegion.from_pixels("u", [0])])
    with pytest.raises(ValueError):
        sample_y_pred([0.0, 1.0], [0.0], 1.0, pm, np.ones((1, 1)), np.random.default_rng(0))


def _fitted(seed=0):
    ctx, grid, regs = _three_region_ctx(seed)
    td = run_chains(ctx, McmcConfig(n_chains=2, warmup=100, sampling=100, thin=10, seed=seed))
    return ctx, grid, regs, td, compose(ctx, td, seed)


def test_prediction_at_observed_regions_is_degenerate():
    ctx, grid, regs, td, post = _fitted()
    pset = PredictionSet.build(ctx, compute_weights(grid, regs))
    for g in range(post.G):
        th = td.theta(g)
        mean, cov = omega_pred_moments(post.omega_B[g], th, ctx.C_B(th.phi), pset.cross.matrix(th.phi),
                                       pset.within.matrix(th.phi))
        np.testing.assert_allclose(mean, post.omega_B[g], atol=1e-10)
        assert np.all(np.diag(cov) <= 1e-10)
    pd = predict(ctx, post, pset, 0)
    np.testing.assert_allclose(pd.omega_u, post.omega_B, atol=1e-4)


def test_draw_level_pairing_under_permutation():
    ctx, grid, regs, td, post = _fitted(1)
    perm = np.random.default_rng(0).permutation(td.G)
    post2 = compose(ctx, td.subset(perm), 1)
    np.testing.assert_array_equal(post2.beta, post.beta[perm])
    np.testing.assert_array_equal(post2.omega_B, post.omega_B[perm])
    pset = PredictionSet.build(ctx, compute_weights(grid, regs[:2]))
    a, b = predict(ctx, post, pset, 3), predict(ctx, post2, pset, 3)
    np.testing.assert_array_equal(b.y_u, a.y_u[perm])


def _pd(y, ids, areas):
    y = np.asarray(y, dtype=float)
    return PredictiveDraws(np.zeros_like(y), y, tuple(ids), np.asarray(areas, dtype=float))


def test_totals():
    pd = _pd(np.full((5, 1), 10.0), ["a"], [2.0])
    np.testing.assert_array_equal(aggregate_totals(pd, {"a": "g"})["g"], np.full(5, 20.0))
    rng = np.random.default_rng(0)
    y = rng.normal(5, 1, (50, 4))
    pd = _pd(y, "abcd", [1.0, 2.0, 0.5, 3.0])
    t = aggregate_totals(pd, {"a": "x", "b": "x", "c": "y", "d": "y"})
    np.testing.assert_allclose(t["x"], y[:, 0] + 2 * y[:, 1])
    grand = aggregate_totals(pd, {r: "all" for r in "abcd"})["all"]
    np.testing.assert_allclose(t["x"] + t["y"], grand, rtol=1e-14)
    t2 = aggregate_totals(pd, {"a": "x"}, areas={"a": 4.0, "b": 1, "c": 1, "d": 1})
    np.testing.assert_allclose(t2["x"], 4 * y[:, 0])


def test_totals_unknown_region():
    with pytest.raises(UnknownGroup, match="zz"):
        aggregate_totals(_pd(np.ones((3, 1)), ["a"], [1.0]), {"zz": "g"})


def test_summarize():
    s = summarize(np.arange(1, 101, dtype=float)[:, None])
    assert s["median"][0] == 50.5
    assert s["lower"][0] == pytest.approx(1 + 0.025 * 99)
    assert s["upper"][0] == pytest.approx(1 + 0.975 * 99)
