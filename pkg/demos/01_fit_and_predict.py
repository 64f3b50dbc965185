"""Fit the change-of-support model to one simulated dataset and predict two units.

The data follow the O/K simulation design: a 27 x 27 pixel grid carries a
standard normal predictor, outcomes are observed only as means over 3 x 3
pixel plots, and the targets are the mean outcomes over two irregular
units ("O" and "K") that no plot covers.

Run with ``python3 demos/01_fit_and_predict.py``; takes a few seconds.
"""
import numpy as np

from cosgp import McmcConfig, PredictionSet, PriorSpec, compute_weights, fit_posterior, predict
from cosgp.model import ModelContext
from cosgp.posterior import summarize
from cosgp.sampler import PARAM_NAMES
from cosgp.experiments import SimDesign, simulate_dataset

design = SimDesign()
data = simulate_dataset(design, seed=1)
print(f"{len(data.obs_regions)} observed plots on a {design.n_side} x {design.n_side} grid")

# Observed plots become rows of the aggregation map H; the model context
# precomputes everything that does not depend on the hyperparameters.
obs_map = compute_weights(data.grid, data.obs_regions)
ctx = ModelContext.build(data.grid, obs_map, data.y_obs, PriorSpec.default(2), gamma=design.gamma)

# Stage 1 samples (sigma2, tau2, phi) with beta and omega integrated out;
# stage 2 draws (beta, omega_B) exactly for each retained draw.
post = fit_posterior(ctx, McmcConfig(seed=1))
print(f"\n{post.G} posterior draws, acceptance {np.round(post.theta.acceptance_rate, 2)}")
truth = dict(zip(PARAM_NAMES, (design.sigma2, design.tau2, design.phi)))
s = summarize(post.theta.draws)
for j, name in enumerate(PARAM_NAMES):
    print(f"  {name:>6}: median {s['median'][j]:.2f}  95% [{s['lower'][j]:.2f}, {s['upper'][j]:.2f}]"
          f"  truth {truth[name]}")
s = summarize(post.beta)
print(f"    beta: medians {np.round(s['median'], 2)}  truth {design.beta}")

# Stage 3: the units are new supports, so their latent means are drawn
# conditionally on omega_B and outcome noise is added on top.
units = list(data.units["small"].values())
pd = predict(ctx, post, PredictionSet.build(ctx, compute_weights(data.grid, units)), seed=1)
print("\nunit   truth   median   95% interval")
s = summarize(pd.y_u)
for j, u in enumerate(units):
    print(f"  {u.id}   {data.truth['small'][u.id]:6.2f}   {s['median'][j]:6.2f}   [{s['lower'][j]:.2f}, {s['upper'][j]:.2f}]")
