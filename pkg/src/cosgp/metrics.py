"""Predictive scores: RMSPE, median absolute error, empirical CRPS, interval coverage."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyInput, TooFewSamples

__all__ = ["ScoreReport", "rmspe", "mpe", "crps_empirical", "ci_cover_width", "quantile"]


def _errors(errors):
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise EmptyInput("empty error vector")
    return e


def rmspe(errors) -> float:
    e = _errors(errors)
    return float(np.sqrt(np.mean(e * e)))


def mpe(errors) -> float:
    """Median absolute prediction error (midpoint of the two central values for even counts)."""
    return float(np.median(np.abs(_errors(errors))))


def crps_empirical(samples, observed) -> float:
    """``mean|X - y| - 0.5 mean|X - X'|`` over all ordered sample pairs.

    The pair term uses the sorted-sample identity
    ``sum_{g,h} |x_g - x_h| = 2 sum_i (2i - n - 1) x_(i)``.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise TooFewSamples("CRPS needs at least 2 samples")
    first = np.mean(np.abs(x - observed))
    pair_sum = 2.0 * np.dot(2.0 * np.arange(1, n + 1) - n - 1, x)
    return float(max(first - 0.5 * pair_sum / (n * n), 0.0))


def quantile(samples, q):
    """Empirical quantile, linear interpolation between order statistics."""
    return np.quantile(np.asarray(samples, dtype=float), q, method="linear")


def ci_cover_width(samples, observed, level: float = 0.95):
    """(covered, width) of the equal-tailed ``level`` interval."""
    x = np.asarray(samples, dtype=float).ravel()
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = round((1.0 - level) / 2.0, 12)  # 0.025, not 0.025000000000000022
    if x.size < int(np.ceil(1.0 / a - 1e-9)):
        raise TooFewSamples(f"{x.size} samples are too few for a {level:.0%} interval")
    lo, hi = quantile(x, [a, 1.0 - a])
    return bool(lo <= observed <= hi), float(hi - lo)


@dataclass
class ScoreReport:
    """Scores per target plus their averages.

    ``per_target`` maps target name to a dict with keys ``rmspe``, ``mpe``,
    ``crps``, ``ci_cover``, ``ci_width``.
    """

    per_target: dict
    n_targets: int
    n_replicates: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, truth: dict, samples: dict, level: float = 0.95, n_replicates=None,
                         with_crps: bool = True):
        """Score each target's list of predictive sample sets against its list of truths.

        ``truth[name]`` is a sequence of true values (one per replicate or
        held-out case); ``samples[name]`` the matching sequence of draws.
        """
        per = {}
        for name, ys in truth.items():
            draws = samples[name]
            ys = np.asarray(ys, dtype=float)
            means = np.array([np.mean(d) for d in draws])
            err = means - ys
            cw = [ci_cover_width(d, y, level) for d, y in zip(draws, ys)]
            per[name] = {
                "rmspe": rmspe(err),
                "mpe": mpe(err),
                "crps": float(np.mean([crps_empirical(d, y) for d, y in zip(draws, ys)])) if with_crps else None,
                "ci_cover": float(np.mean([c for c, _ in cw])),
                "ci_width": float(np.mean([w for _, w in cw])),
                "n": int(len(ys)),
            }
        n_rep = n_replicates if n_replicates is not None else max((v["n"] for v in per.values()), default=0)
        return cls(per, len(per), n_rep)

    @property
    def mean(self) -> dict:
        keys = ("rmspe", "mpe", "crps", "ci_cover", "ci_width")
        out = {}
        for k in keys:
            vals = [v[k] for v in self.per_target.values() if v.get(k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def to_json(self) -> str:
        d = asdict(self)
        d["mean"] = self.mean
        return json.dumps(d, indent=2, sort_keys=True)

    def table_row(self, targets=None) -> dict:
        """Flat row in the layout ``RMSPE O, RMSPE K, MPE O, ... CI width K``."""
        targets = list(self.per_target) if targets is None else list(targets)
        row = {}
        for label, key in (("RMSPE", "rmspe"), ("MPE", "mpe"), ("CI cover", "ci_cover"),
                           ("CI width", "ci_width")):
            for t in targets:
                row[f"{label} {t}"] = self.per_target[t][key]
        return row
