"""Ten-fold cross-validation with held-out plots predicted as new supports.

A synthetic dataset with 62 observed coarse cells stands in for a real
survey.  In each fold the held-out plots are dropped from the fit and
predicted from the rest; scores are pooled over all held-out plots.

Run with ``python3 demos/03_cross_validation.py``; takes about half a minute.
"""
from cosgp import McmcConfig
from cosgp.experiments import run_cross_validation, synthetic_cv_bundle

bundle = synthetic_cv_bundle(seed=2)
print(f"{len(bundle.regions)} observed plots\n")
print(f"{'method':>7} {'CI cover':>9} {'RMSPE':>7} {'MPE':>7} {'CRPS':>7} {'CI width':>9}")
for method in ("cos", "block"):
    rep = run_cross_validation(bundle, k=10, method=method, cfg=McmcConfig(seed=4))
    s = rep.per_target["pooled"]
    print(f"{method:>7} {s['ci_cover']:9.2f} {s['rmspe']:7.3f} {s['mpe']:7.3f} {s['crps']:7.3f} {s['ci_width']:9.3f}")
