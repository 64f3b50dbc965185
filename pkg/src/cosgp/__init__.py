"""Bayesian change-of-support Gaussian process models.

Outcomes observed on coarse regions are modelled through a latent
Gaussian process on a fine pixel grid that carries the predictors.  The
regression coefficients and the aggregated latent field are integrated
out, so MCMC runs on three hyperparameters only; everything else is drawn
exactly afterwards.
"""

__version__ = "0.1.0"

from .block import BlockGrid, block_map, fit_block, predict_block, upscale_predictors
from .covariance import CholeskyFactor, KernelConfig, PairTable, build_CB, build_cross_cov, taper_kernel, tapered_corr
from .errors import *  # noqa: F401,F403
from .metrics import ScoreReport, ci_cover_width, crps_empirical, mpe, rmspe
from .model import (FlatBeta, GaussianBeta, HyperParams, InverseGamma, ModelContext, PriorSpec, Uniform,
                    log_marginal, log_marginal_flat_beta, log_marginal_gaussian_beta)
from .posterior import (PosteriorDraws, PredictionSet, PredictiveDraws, aggregate_totals, compose,
                        fit_posterior, predict, sample_beta_omega)
from .sampler import McmcConfig, ThetaDraws, diagnostics, run_chains
from .supports import AggregationMap, FineGrid, SupportRegion, compute_weights, outcome_vector
