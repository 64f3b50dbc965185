"""Composition sampling and posterior prediction.

Given each draw of (sigma2, tau2, phi):

1. (beta, omega_B) is drawn exactly from its Gaussian full conditional;
2. the aggregated latent process on prediction regions is drawn from its
   Gaussian conditional on omega_B;
3. the region mean outcome is drawn from its Gaussian predictive.

``C_B``, ``C_BU`` and ``C_UU`` are correlation-scale matrices; sigma2 is
applied explicitly.  The pixel-level latent vector is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as la

from .covariance import CholeskyFactor, PairTable, chol_psd
from .errors import UnknownGroup
from .model import GaussianBeta, HyperParams, ModelContext
from .rng import STAGE_COMPOSE, STAGE_PREDICT, stream
from .sampler import McmcConfig, ThetaDraws, run_chains
from .supports import AggregationMap

__all__ = [
    "PosteriorDraws",
    "PredictiveDraws",
    "PredictionSet",
    "conditional_precision",
    "sample_beta_omega",
    "compose",
    "fit_posterior",
    "omega_pred_moments",
    "sample_omega_pred",
    "sample_y_pred",
    "predict",
    "aggregate_totals",
    "summarize",
]


@dataclass
class PosteriorDraws:
    theta: ThetaDraws
    beta: np.ndarray      # (G, p + 1)
    omega_B: np.ndarray   # (G, n_b)
    region_ids: tuple = ()

    @property
    def G(self) -> int:
        return len(self.beta)


@dataclass
class PredictiveDraws:
    omega_u: np.ndarray   # (G, n_p)
    y_u: np.ndarray       # (G, n_p) predicted region means
    region_ids: tuple
    areas: np.ndarray
    totals: dict = field(default_factory=dict)

    @property
    def G(self) -> int:
        return len(self.y_u)

    def column(self, region_id) -> np.ndarray:
        return self.y_u[:, self.region_ids.index(region_id)]


def _draw_key(theta: ThetaDraws, g):
    return int(theta.chain_ids[g]), int(theta.iters[g])


# ---------------------------------------------------------------------------
# stage 2: (beta, omega_B) | theta, y
# ---------------------------------------------------------------------------

def conditional_precision(ctx: ModelContext, theta: HyperParams, cb_factor: CholeskyFactor | None = None):
    """Precision ``M^{-1}`` and linear term ``m`` of (beta, omega_B) | theta, y.

    The posterior is N(M m, M).  A flat beta prior contributes a zero block.
    """
    n, k = ctx.n_b, ctx.n_coef
    if cb_factor is None:
        cb_factor = CholeskyFactor(ctx.C_B(theta.phi), ctx.blocks)
    dinv = 1.0 / (theta.tau2 * ctx.D_h_diag)
    A = np.hstack([ctx.HX, np.eye(n)])
    Minv = A.T @ (dinv[:, None] * A)
    Minv[k:, k:] += cb_factor.solve(np.eye(n)) / theta.sigma2
    m = A.T @ (dinv * ctx.y)
    beta = ctx.prior.beta
    if isinstance(beta, GaussianBeta):
        Minv[:k, :k] += beta.precision
        m[:k] += beta.precision @ beta.mean
    Minv = 0.5 * (Minv + Minv.T)
    return Minv, m


def sample_beta_omega(ctx: ModelContext, theta: HyperParams, rng, cb_factor=None):
    """One exact draw of (beta, omega_B) from N(M m, M).

    Factors ``M^{-1} = L L^T``, solves for the mean, then adds
    ``L^{-T} z`` with standard normal ``z``.
    """
    Minv, m = conditional_precision(ctx, theta, cb_factor)
    L, _ = chol_psd(Minv)
    mean = la.cho_solve((L, True), m, check_finite=False)
    x = mean + la.solve_triangular(L, rng.standard_normal(len(m)), lower=True, trans="T",
                                   check_finite=False)
    k = ctx.n_coef
    return x[:k], x[k:]


def compose(ctx: ModelContext, theta: ThetaDraws, seed: int) -> PosteriorDraws:
    """Stage 2 for every theta draw; draw ``g`` uses stream ``(seed, compose, chain, iter)``."""
    G = theta.G
    beta = np.empty((G, ctx.n_coef))
    omega = np.empty((G, ctx.n_b))
    for g in range(G):
        rng = stream(seed, STAGE_COMPOSE, *_draw_key(theta, g))
        beta[g], omega[g] = sample_beta_omega(ctx, theta.theta(g), rng)
    ids = ctx.obs_map.region_ids if ctx.obs_map is not None else ()
    return PosteriorDraws(theta, beta, omega, ids)


def fit_posterior(ctx: ModelContext, cfg: McmcConfig) -> PosteriorDraws:
    """Stages 1 and 2: MCMC on (sigma2, tau2, phi), then composition sampling."""
    return compose(ctx, run_chains(ctx, cfg), cfg.seed)


# ---------------------------------------------------------------------------
# stage 3: prediction
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PredictionSet:
    """Phi-independent structures for one set of prediction regions."""

    pred_map: AggregationMap
    design: np.ndarray     # (n_p, p + 1) aggregated design rows
    cross: PairTable       # observed x prediction
    within: PairTable      # prediction x prediction

    @classmethod
    def build(cls, ctx: ModelContext, pred_map: AggregationMap):
        if ctx.grid is None or ctx.obs_map is None:
            raise ValueError("context was built without grid / observation map")
        grid, gamma = ctx.grid, ctx.cb.gamma
        design = np.asarray(pred_map.H @ grid.design)
        return cls(pred_map, design, PairTable(grid, ctx.obs_map, pred_map, gamma),
                   PairTable(grid, pred_map, None, gamma))

    @property
    def n_p(self) -> int:
        return self.pred_map.n_b


def omega_pred_moments(omega_B, theta: HyperParams, CB, CBU, CUU, cb_factor=None):
    """Mean ``C_BU' C_B^-1 omega_B`` and covariance ``sigma2 (C_UU - C_BU' C_B^-1 C_BU)``."""
    F = cb_factor if cb_factor is not None else CholeskyFactor(CB)
    W = F.half_solve(CBU)
    mean = W.T @ F.half_solve(omega_B)
    cov = theta.sigma2 * (CUU - W.T @ W)
    return mean, 0.5 * (cov + cov.T)


def sample_omega_pred(omega_B, theta: HyperParams, CB, CBU, CUU, rng, cb_factor=None):
    mean, cov = omega_pred_moments(omega_B, theta, CB, CBU, CUU, cb_factor)
    if len(mean) == 0:
        return mean
    scale = theta.sigma2 * float(np.mean(np.diag(CUU)))
    L, _ = chol_psd(cov, scale=scale)
    return mean + L @ rng.standard_normal(len(mean))


def sample_y_pred(omega_u, beta, tau2, pred_map: AggregationMap, pred_design, rng):
    """Region-mean outcome: N(design . beta + omega_u, tau2 * sum h^2)."""
    omega_u = np.asarray(omega_u, dtype=float)
    pred_design = np.asarray(pred_design, dtype=float)
    if pred_design.shape != (len(omega_u), len(beta)) or pred_map.n_b != len(omega_u):
        raise ValueError("prediction design, map and latent draws disagree in shape")
    mean = pred_design @ beta + omega_u
    if tau2 == 0:
        return mean
    return mean + np.sqrt(tau2 * pred_map.D_h_diag) * rng.standard_normal(len(mean))


def predict(ctx: ModelContext, post: PosteriorDraws, pset: PredictionSet, seed: int) -> PredictiveDraws:
    """Stage 3 for every posterior draw; draw ``g`` uses stream ``(seed, predict, chain, iter)``."""
    G, n_p = post.G, pset.n_p
    omega_u = np.empty((G, n_p))
    y_u = np.empty((G, n_p))
    theta = post.theta
    for g in range(G):
        th = theta.theta(g)
        rng = stream(seed, STAGE_PREDICT, *_draw_key(theta, g))
        CB = ctx.C_B(th.phi)
        F = CholeskyFactor(CB, ctx.blocks)
        omega_u[g] = sample_omega_pred(post.omega_B[g], th, CB, pset.cross.matrix(th.phi),
                                       pset.within.matrix(th.phi), rng, F)
        y_u[g] = sample_y_pred(omega_u[g], post.beta[g], th.tau2, pset.pred_map, pset.design, rng)
    return PredictiveDraws(omega_u, y_u, pset.pred_map.region_ids, np.asarray(pset.pred_map.areas))


def aggregate_totals(draws: PredictiveDraws, grouping: Mapping, areas=None) -> dict:
    """Per-group draws of ``sum(region mean * region area)``.

    ``grouping`` maps region id to group name; ``areas`` (mapping or
    array aligned with ``draws.region_ids``) defaults to the areas stored
    with the draws.
    """
    ids = draws.region_ids
    index = {r: i for i, r in enumerate(ids)}
    unknown = [r for r in grouping if r not in index]
    if unknown:
        raise UnknownGroup(f"grouping references unknown region id(s): {', '.join(map(str, unknown))}")
    if areas is None:
        area = np.asarray(draws.areas, dtype=float)
    elif isinstance(areas, Mapping):
        area = np.array([float(areas[r]) for r in ids])
    else:
        area = np.asarray(areas, dtype=float)
    totals = {}
    for r, grp in grouping.items():
        i = index[r]
        contrib = draws.y_u[:, i] * area[i]
        totals[grp] = totals[grp] + contrib if grp in totals else contrib.copy()
    draws.totals.update(totals)
    return totals


def summarize(samples, level: float = 0.95) -> dict:
    """Median and equal-tailed interval of each column of a (G, n) array."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    a = round((1.0 - level) / 2.0, 12)  # 0.025, not 0.025000000000000022
    lo, med, hi = np.quantile(samples, [a, 0.5, 1.0 - a], axis=0)
    return {"median": med, "lower": lo, "upper": hi, "mean": samples.mean(axis=0)}
