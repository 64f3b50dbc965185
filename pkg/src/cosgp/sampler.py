"""Adaptive random-walk Metropolis for (sigma2, tau2, phi).

The chain moves on unconstrained coordinates

    z = (log sigma2, log tau2, logit((phi - a) / (b - a)))

with the log-Jacobian added to the target.  During warm-up the proposal
scale follows a Robbins-Monro recursion toward ``target_accept`` and,
after ``adapt_start`` iterations, the proposal shape tracks the empirical
covariance of the recent warm-up history.  Both are frozen once sampling
starts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as la
from scipy.stats import norm, rankdata

from .errors import AllRejected, NonFinite, NotPSD, TooFewDraws
from .model import HyperParams, ModelContext, PriorSpec, log_marginal
from .rng import STAGE_MCMC, stream

__all__ = [
    "PARAM_NAMES",
    "McmcConfig",
    "ThetaDraws",
    "run_chains",
    "diagnostics",
    "split_rhat",
    "ess_bulk",
    "to_unconstrained",
    "from_unconstrained",
    "log_jacobian",
]

PARAM_NAMES = ("sigma2", "tau2", "phi")
_MAX_INIT_TRIES = 100


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    warmup: int = 500
    sampling: int = 500
    thin: int = 10
    seed: int = 0
    target_accept: float = 0.30
    init: str | Mapping = "prior"
    fixed: Mapping | None = None
    adapt_start: int = 100
    keep_chains: bool = False

    def __post_init__(self):
        if min(self.n_chains, self.sampling, self.thin) < 1 or self.warmup < 0:
            raise ValueError("chain counts must be positive")
        if self.sampling % self.thin:
            raise ValueError("thin must divide the number of sampling iterations")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.fixed:
            bad = set(self.fixed) - set(PARAM_NAMES)
            if bad:
                raise ValueError(f"unknown fixed parameter(s): {sorted(bad)}")

    @property
    def draws_per_chain(self) -> int:
        return self.sampling // self.thin

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.draws_per_chain


@dataclass
class ThetaDraws:
    """Thinned draws of (sigma2, tau2, phi), chain-major order."""

    draws: np.ndarray            # (G, 3)
    chain_ids: np.ndarray        # (G,)
    iters: np.ndarray            # sampling iteration of each kept draw
    log_post: np.ndarray         # (G,) log marginal posterior at each draw
    acceptance_rate: np.ndarray  # (n_chains,)
    diagnostics: dict = field(default_factory=dict)
    chains: np.ndarray | None = None  # unthinned (n_chains, sampling, 3) if kept

    @property
    def G(self) -> int:
        return len(self.draws)

    @property
    def n_chains(self) -> int:
        return len(self.acceptance_rate)

    def theta(self, g) -> HyperParams:
        s, t, p = self.draws[g]
        return HyperParams(float(s), float(t), float(p))

    def by_chain(self) -> np.ndarray:
        """(n_chains, draws_per_chain, 3) view of the thinned draws."""
        return self.draws.reshape(self.n_chains, -1, 3)

    def subset(self, idx) -> "ThetaDraws":
        idx = np.asarray(idx)
        return ThetaDraws(self.draws[idx], self.chain_ids[idx], self.iters[idx], self.log_post[idx],
                          self.acceptance_rate, self.diagnostics)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def to_unconstrained(theta, prior: PriorSpec) -> np.ndarray:
    s2, t2, phi = np.asarray(theta, dtype=float)
    a, b = prior.phi.low, prior.phi.high
    u = (phi - a) / (b - a)
    return np.array([math.log(s2), math.log(t2), math.log(u) - math.log1p(-u)])


def from_unconstrained(z, prior: PriorSpec) -> np.ndarray:
    a, b = prior.phi.low, prior.phi.high
    u = 1.0 / (1.0 + math.exp(-z[2])) if z[2] >= 0 else math.exp(z[2]) / (1.0 + math.exp(z[2]))
    return np.array([math.exp(z[0]), math.exp(z[1]), a + (b - a) * u])


def log_jacobian(z, prior: PriorSpec) -> float:
    """log |d theta / d z|."""
    a, b = prior.phi.low, prior.phi.high
    return float(z[0] + z[1] + math.log(b - a) + _log_sigmoid(z[2]) + _log_sigmoid(-z[2]))


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------

def _safe_log_marginal(ctx, th):
    try:
        theta = HyperParams(*th)
    except ValueError:
        return -math.inf
    try:
        v = log_marginal(ctx, theta)
    except NotPSD:
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def _init_theta(ctx, cfg, rng, fixed_vals):
    prior = ctx.prior
    if isinstance(cfg.init, Mapping):
        th = np.array([float(cfg.init[k]) for k in PARAM_NAMES])
        th[~np.isnan(fixed_vals)] = fixed_vals[~np.isnan(fixed_vals)]
        lp = _safe_log_marginal(ctx, th)
        if lp == -math.inf:
            raise NonFinite("log posterior is not finite at the supplied initial values")
        return th, lp
    for _ in range(_MAX_INIT_TRIES):
        th = np.array([prior.sigma2.sample(rng), prior.tau2.sample(rng), prior.phi.sample(rng)])
        th[~np.isnan(fixed_vals)] = fixed_vals[~np.isnan(fixed_vals)]
        lp = _safe_log_marginal(ctx, th)
        if lp > -math.inf:
            return th, lp
    raise NonFinite(f"log posterior not finite at {_MAX_INIT_TRIES} prior draws")


def _run_one(ctx: ModelContext, cfg: McmcConfig, chain: int):
    rng = stream(cfg.seed, STAGE_MCMC, chain)
    prior = ctx.prior
    fixed_vals = np.full(3, np.nan)
    for k, v in (cfg.fixed or {}).items():
        fixed_vals[PARAM_NAMES.index(k)] = float(v)
    free = np.isnan(fixed_vals)
    d = int(free.sum())

    th, lp_theta = _init_theta(ctx, cfg, rng, fixed_vals)
    z = to_unconstrained(th, prior)
    lp = lp_theta + log_jacobian(z, prior)

    n_total = cfg.warmup + cfg.sampling
    kept = np.empty((cfg.draws_per_chain, 3))
    kept_lp = np.empty(cfg.draws_per_chain)
    kept_it = np.empty(cfg.draws_per_chain, dtype=np.int64)
    full = np.empty((cfg.sampling, 3)) if cfg.keep_chains else None

    if d == 0:
        kept[:] = th
        kept_lp[:] = lp_theta
        kept_it[:] = np.arange(cfg.thin - 1, cfg.sampling, cfg.thin)
        if full is not None:
            full[:] = th
        return kept, kept_lp, kept_it, 1.0, full

    log_scale = math.log(2.38 / math.sqrt(d))
    shape = 0.1 * np.eye(d)
    hist = np.empty((max(cfg.warmup, 1), d))
    chol = math.exp(log_scale) * la.cholesky(shape, lower=True)
    accepted = 0
    k = 0
    for t in range(n_total):
        warm = t < cfg.warmup
        step = chol @ rng.standard_normal(d)
        zp = z.copy()
        zp[free] += step
        thp = from_unconstrained(zp, prior)
        lpp = _safe_log_marginal(ctx, thp)
        if lpp > -math.inf:
            lpp_z = lpp + log_jacobian(zp, prior)
            log_ratio = lpp_z - lp
        else:
            lpp_z = -math.inf
            log_ratio = -math.inf
        if math.log(rng.uniform()) < log_ratio:
            z, lp, th, lp_theta = zp, lpp_z, thp, lpp
            if not warm:
                accepted += 1
        if warm:
            alpha = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
            log_scale += (t + 1) ** -0.6 * (alpha - cfg.target_accept)
            hist[t] = z[free]
            if t + 1 >= cfg.adapt_start:
                recent = hist[(t + 1) // 2: t + 1]
                emp = np.atleast_2d(np.cov(recent, rowvar=False)) + 1e-6 * np.eye(d)
                shape = emp
            try:
                chol = math.exp(log_scale) * la.cholesky(shape, lower=True, check_finite=False)
            except la.LinAlgError:
                shape = 0.1 * np.eye(d)
                chol = math.exp(log_scale) * la.cholesky(shape, lower=True)
        else:
            i = t - cfg.warmup
            if full is not None:
                full[i] = th
            if (i + 1) % cfg.thin == 0:
                kept[k] = th
                kept_lp[k] = lp_theta
                kept_it[k] = i
                k += 1
    rate = accepted / cfg.sampling
    if accepted == 0:
        raise AllRejected(f"chain {chain} accepted no proposals after warm-up")
    return kept, kept_lp, kept_it, rate, full


def run_chains(ctx: ModelContext, cfg: McmcConfig = McmcConfig(), density: str | None = None) -> ThetaDraws:
    """Sample the marginal posterior of (sigma2, tau2, phi).

    ``density`` is ``"gaussian-beta"`` or ``"flat-beta"``; by default it
    follows the beta prior in ``ctx.prior``.  Chains use independent
    streams keyed by ``(seed, chain)``, so results are reproducible.
    """
    if density is not None:
        want_flat = {"gaussian-beta": False, "flat-beta": True}[density]
        if want_flat != ctx.prior.flat_beta:
            raise ValueError(f"density {density!r} does not match the beta prior in the context")
    out = [_run_one(ctx, cfg, c) for c in range(cfg.n_chains)]
    draws = np.concatenate([o[0] for o in out])
    lps = np.concatenate([o[1] for o in out])
    its = np.concatenate([o[2] for o in out])
    chain_ids = np.repeat(np.arange(cfg.n_chains), cfg.draws_per_chain)
    rates = np.array([o[3] for o in out])
    chains = np.stack([o[4] for o in out]) if cfg.keep_chains else None
    td = ThetaDraws(draws, chain_ids, its, lps, rates, {}, chains)
    if cfg.n_chains >= 2 and cfg.draws_per_chain >= 10:
        td.diagnostics = diagnostics(td)
    return td


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def _split(x):
    m, n = x.shape
    h = n // 2
    return np.vstack([x[:, :h], x[:, n - h:]])


def _rank_normalize(x):
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    W = np.mean(np.var(x, axis=1, ddof=1))
    B = n * np.var(np.mean(x, axis=1), ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def split_rhat(x) -> float:
    """Rank-normalized split R-hat (max of bulk and folded versions).

    ``x`` is (n_chains, n_draws).
    """
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return 1.0
    bulk = _rhat_basic(_split(_rank_normalize(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat_basic(_split(_rank_normalize(folded))) if np.ptp(folded) > 0 else 1.0
    return max(bulk, tail)


def _autocov(x):
    n = len(x)
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    ac = np.fft.irfft(f * np.conjugate(f), nfft)[:n]
    return ac / n


def _ess(x):
    m, n = x.shape
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive, monotone sequence
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        if pairs and p > pairs[-1]:
            p = pairs[-1]
        pairs.append(p)
        t += 2
    tau = -1.0 + 2.0 * sum(pairs) if pairs else 1.0
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


def ess_bulk(x) -> float:
    """Bulk effective sample size of (n_chains, n_draws) draws."""
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return float(x.size)
    return _ess(_split(_rank_normalize(x)))


def diagnostics(draws, threshold: float = 1.05) -> dict:
    """Split R-hat and bulk ESS per parameter.

    Accepts :class:`ThetaDraws` or an array ``(n_chains, n_draws, n_params)``.

    Raises
    ------
    TooFewDraws
        Fewer than 2 chains or fewer than 10 draws per chain.
    """
    if isinstance(draws, ThetaDraws):
        arr = draws.by_chain()
        names = PARAM_NAMES
        acc = draws.acceptance_rate.tolist()
    else:
        arr = np.asarray(draws, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        names = tuple(f"p{j}" for j in range(arr.shape[2])) if arr.shape[2] != 3 else PARAM_NAMES
        acc = None
    m, n = arr.shape[:2]
    if m < 2 or n < 10:
        raise TooFewDraws(f"need >= 2 chains with >= 10 draws each, got {m} x {n}")
    report = {"n_chains": m, "draws_per_chain": n, "params": {}, "warnings": []}
    for j, name in enumerate(names):
        rh = split_rhat(arr[:, :, j])
        es = ess_bulk(arr[:, :, j])
        flag = not rh <= threshold
        report["params"][name] = {"rhat": rh, "ess_bulk": es, "flag": flag}
        if flag:
            report["warnings"].append(f"{name}: R-hat {rh:.3f} exceeds {threshold}")
    if acc is not None:
        report["acceptance_rate"] = acc
    return report
