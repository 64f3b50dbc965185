"""Priors and the marginal log-posterior of (sigma2, tau2, phi).

The regression coefficients and the aggregated latent process are
integrated out analytically, leaving a three-parameter density that is
cheap to evaluate because every matrix involved is ``n_b x n_b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.special import gammaln

from .covariance import CholeskyFactor, PairTable, chol_psd
from .supports import AggregationMap, FineGrid

__all__ = [
    "InverseGamma",
    "Uniform",
    "GaussianBeta",
    "FlatBeta",
    "PriorSpec",
    "HyperParams",
    "ModelContext",
    "log_prior",
    "log_marginal_gaussian_beta",
    "log_marginal_flat_beta",
    "log_marginal",
]

_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class InverseGamma:
    """Shape/scale inverse gamma: density proportional to ``x^-(shape+1) exp(-scale/x)``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("inverse gamma shape and scale must be positive")

    def logpdf(self, x):
        return (self.shape * math.log(self.scale) - gammaln(self.shape)
                - (self.shape + 1.0) * np.log(x) - self.scale / x)

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size=size)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (0 < self.low < self.high):
            raise ValueError("uniform prior needs 0 < low < high")

    def contains(self, x) -> bool:
        return self.low < x < self.high

    def sample(self, rng, size=None):
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True, eq=False)
class GaussianBeta:
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise ValueError("beta prior covariance does not match the mean")
        if not np.allclose(cov, cov.T):
            raise ValueError("beta prior covariance must be symmetric")
        try:
            L = la.cholesky(cov, lower=True)
        except la.LinAlgError:
            raise ValueError("beta prior covariance must be positive definite") from None
        prec = la.cho_solve((L, True), np.eye(len(mean)))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "precision", 0.5 * (prec + prec.T))
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(L)))))

    @property
    def logdet_cov(self) -> float:
        return self._logdet

    @classmethod
    def isotropic(cls, k, variance=1000.0, mean=0.0):
        return cls(np.full(k, float(mean)), variance * np.eye(k))


@dataclass(frozen=True)
class FlatBeta:
    pass


@dataclass(frozen=True)
class PriorSpec:
    beta: GaussianBeta | FlatBeta
    tau2: InverseGamma = InverseGamma(2.0, 2.0)
    sigma2: InverseGamma = InverseGamma(2.0, 2.0)
    phi: Uniform = Uniform(0.006, 30.0)

    @classmethod
    def default(cls, n_coef: int):
        """The simulation-study priors: beta ~ N(0, 1000 I), IG(2, 2) variances,
        phi ~ U(0.006, 30)."""
        return cls(GaussianBeta.isotropic(n_coef, 1000.0))

    @property
    def flat_beta(self) -> bool:
        return isinstance(self.beta, FlatBeta)


@dataclass(frozen=True)
class HyperParams:
    sigma2: float
    tau2: float
    phi: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.tau2 > 0 and self.phi > 0):
            raise ValueError("sigma2, tau2 and phi must be positive")

    def as_array(self):
        return np.array([self.sigma2, self.tau2, self.phi])


@dataclass(frozen=True, eq=False)
class ModelContext:
    """Everything the marginal density needs, fixed across evaluations.

    ``cb`` is the phi-independent pair table that produces ``C_B(phi)``.
    """

    y: np.ndarray
    HX: np.ndarray
    D_h_diag: np.ndarray
    cb: PairTable
    prior: PriorSpec
    blocks: list | None = None
    grid: FineGrid | None = None
    obs_map: AggregationMap | None = None

    def __post_init__(self):
        n = len(self.y)
        if self.HX.shape[0] != n or len(self.D_h_diag) != n or self.cb.n_rows != n:
            raise ValueError("inconsistent dimensions in model context")
        if isinstance(self.prior.beta, GaussianBeta) and len(self.prior.beta.mean) != self.HX.shape[1]:
            raise ValueError("beta prior dimension does not match the design")

    @classmethod
    def build(cls, grid: FineGrid, obs_map: AggregationMap, y, prior: PriorSpec | None = None,
              gamma: float = math.inf, use_blocks: bool = True):
        y = np.asarray(y, dtype=float)
        HX = np.asarray(obs_map.H @ grid.design)
        if prior is None:
            prior = PriorSpec.default(HX.shape[1])
        cb = PairTable(grid, obs_map, None, gamma)
        blocks = cb.blocks() if use_blocks else None
        if blocks is not None and len(blocks) <= 1:
            blocks = None
        return cls(y, HX, np.asarray(obs_map.D_h_diag, dtype=float), cb, prior, blocks, grid, obs_map)

    @property
    def n_b(self) -> int:
        return len(self.y)

    @property
    def n_coef(self) -> int:
        return self.HX.shape[1]

    def C_B(self, phi: float) -> np.ndarray:
        return self.cb.matrix(phi)

    def with_prior(self, prior: PriorSpec) -> "ModelContext":
        return ModelContext(self.y, self.HX, self.D_h_diag, self.cb, prior, self.blocks,
                            self.grid, self.obs_map)

    def select(self, rows) -> "ModelContext":
        """Context restricted to a subset of observed regions."""
        rows = np.asarray(rows)
        sub = self.obs_map.select(rows)
        return ModelContext.build(self.grid, sub, self.y[rows], self.prior, self.cb.gamma,
                                  use_blocks=self.blocks is not None)


def log_prior(prior: PriorSpec, theta: HyperParams) -> float:
    """Log prior of (sigma2, tau2, phi); the uniform on phi is a support check."""
    if not prior.phi.contains(theta.phi):
        return -math.inf
    return float(prior.sigma2.logpdf(theta.sigma2) + prior.tau2.logpdf(theta.tau2))


def _vstar_factor(ctx: ModelContext, theta: HyperParams) -> CholeskyFactor:
    V = theta.sigma2 * ctx.C_B(theta.phi)
    V[np.diag_indices_from(V)] += theta.tau2 * ctx.D_h_diag
    return CholeskyFactor(V, ctx.blocks)


def log_marginal_gaussian_beta(ctx: ModelContext, theta: HyperParams) -> float:
    """log N(y | HX mu, sigma2 C_B + HX V HX^T + tau2 D_h) + log prior.

    The rank-k beta term is handled with the determinant lemma and the
    Woodbury identity, so only ``V* = sigma2 C_B + tau2 D_h`` (block
    diagonal when the taper separates sub-regions) is factored.
    """
    lp = log_prior(ctx.prior, theta)
    if lp == -math.inf:
        return -math.inf
    beta = ctx.prior.beta
    if not isinstance(beta, GaussianBeta):
        raise TypeError("prior has a flat beta; use log_marginal_flat_beta")
    F = _vstar_factor(ctx, theta)
    Z = F.half_solve(ctx.HX)
    u = F.half_solve(ctx.y - ctx.HX @ beta.mean)
    A = beta.precision + Z.T @ Z
    LA, _ = chol_psd(A)
    w = la.solve_triangular(LA, Z.T @ u, lower=True, check_finite=False)
    logdet = F.logdet() + beta.logdet_cov + 2.0 * float(np.sum(np.log(np.diag(LA))))
    quad = float(u @ u - w @ w)
    return -0.5 * (ctx.n_b * _LOG2PI + logdet + quad) + lp


def log_marginal_flat_beta(ctx: ModelContext, theta: HyperParams) -> float:
    """Marginal under p(beta) ∝ 1: the exact integral over beta of N(y | HX beta, V*).

    Equals ``(2 pi)^{-(n-k)/2} |V*_beta|^{1/2} |V*|^{-1/2}
    exp(-(y' V*^-1 y - mu*' V*_beta^-1 mu*) / 2)`` times the prior.
    """
    lp = log_prior(ctx.prior, theta)
    if lp == -math.inf:
        return -math.inf
    F = _vstar_factor(ctx, theta)
    Z = F.half_solve(ctx.HX)
    u = F.half_solve(ctx.y)
    LQ, _ = chol_psd(Z.T @ Z)
    w = la.solve_triangular(LQ, Z.T @ u, lower=True, check_finite=False)
    logdet = F.logdet() + 2.0 * float(np.sum(np.log(np.diag(LQ))))
    quad = float(u @ u - w @ w)
    return -0.5 * ((ctx.n_b - ctx.n_coef) * _LOG2PI + logdet + quad) + lp


def log_marginal(ctx: ModelContext, theta: HyperParams) -> float:
    """Dispatch on the beta prior type."""
    if ctx.prior.flat_beta:
        return log_marginal_flat_beta(ctx, theta)
    return log_marginal_gaussian_beta(ctx, theta)
