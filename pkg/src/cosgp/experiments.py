"""Simulation study on the 27 x 27 "O/K" layout and k-fold cross-validation.

Each replicate draws a fresh dataset from the fine-grid model, fits the
requested methods to the same data, and predicts every prediction unit of
both study variants from a single fit.  Everything is keyed by the master
seed and the replicate index, so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import functools
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist, squareform

from .block import BlockGrid, block_map, coarse_cells, upscale_predictors
from .covariance import chol_psd
from .errors import CosError, ConfigError, ReplicateFailed, TooFewRegions
from .metrics import ScoreReport
from .model import ModelContext, PriorSpec
from .posterior import PredictionSet, fit_posterior, predict
from .rng import STAGE_FOLDS, STAGE_SIMULATE, stream
from .sampler import PARAM_NAMES, McmcConfig
from .supports import FineGrid, SupportRegion, compute_weights

__all__ = [
    "Layout",
    "load_layout",
    "SimDesign",
    "SimData",
    "simulate_dataset",
    "replicate_seed",
    "run_replicate",
    "run_ok_studies",
    "run_ok_study",
    "summarize_records",
    "CvDesign",
    "DataBundle",
    "make_folds",
    "run_cross_validation",
    "synthetic_cv_bundle",
    "fit_predict",
    "build_context",
]

METHODS = ("cos", "block")
VARIANTS = ("small", "large")
ROLES = ("observed", "O", "K", "white", "none")


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Layout:
    """Pixel roles on the simulation lattice.

    ``masks[role]`` is a boolean ``(n_side, n_side)`` array indexed
    ``[row, col]`` with ``row`` the lattice y index (0 at the bottom) and
    ``col`` the x index.  A pixel may carry several roles, e.g. an observed
    coarse cell that overlaps a letter.
    """

    masks: dict
    factor: int = 3

    @property
    def n_side(self) -> int:
        return next(iter(self.masks.values())).shape[0]

    def pixel_id(self, row, col):
        return np.asarray(row) * self.n_side + np.asarray(col)

    def pixels(self, *roles) -> np.ndarray:
        mask = np.zeros((self.n_side, self.n_side), bool)
        for r in roles:
            mask |= self.masks[r]
        r, c = np.nonzero(mask)
        return np.sort(self.pixel_id(r, c))

    def observed_cells(self) -> list:
        """Observed coarse cells as ``(cell id, pixel ids)``, in cell order."""
        f = self.factor
        obs = self.masks["observed"]
        out = []
        for cr in range(self.n_side // f):
            for cc in range(self.n_side // f):
                mask = obs[cr * f:(cr + 1) * f, cc * f:(cc + 1) * f]
                if not mask.any():
                    continue
                if not mask.all():
                    raise ConfigError(f"coarse cell ({cr}, {cc}) is only partly observed")
                rr, ccs = np.meshgrid(np.arange(cr * f, (cr + 1) * f), np.arange(cc * f, (cc + 1) * f),
                                      indexing="ij")
                out.append((f"c{cr}_{cc}", np.sort(self.pixel_id(rr, ccs).ravel())))
        return out

    def units(self, variant: str = "small") -> dict:
        """Pixel ids of the "O" and "K" prediction units.

        The large variant adds the white pixels connected to each letter.
        """
        if variant == "small":
            return {"O": self.pixels("O"), "K": self.pixels("K")}
        if variant != "large":
            raise ConfigError(f"unknown design variant {variant!r}")
        lab, _ = ndimage.label(self.masks["O"] | self.masks["K"] | self.masks["white"])
        out = {}
        for name in ("O", "K"):
            comps = np.unique(lab[self.masks[name]])
            r, c = np.nonzero(np.isin(lab, comps))
            out[name] = np.sort(self.pixel_id(r, c))
        return out

    def validate(self, counts=(("O", 38), ("K", 48))):
        for name, n in counts:
            got = int(self.masks[name].sum())
            if got != n:
                raise ConfigError(f"layout has {got} {name!r} pixels, expected {n}")
        if (self.masks["O"] & self.masks["K"]).any() or ((self.masks["O"] | self.masks["K"])
                                                         & self.masks["white"]).any():
            raise ConfigError("letter and white pixels must be disjoint")
        if not self.observed_cells():
            raise ConfigError("layout has no observed cells")
        large = self.units("large")
        if np.intersect1d(large["O"], large["K"]).size:
            raise ConfigError("large O and K units overlap")
        return self


def _default_layout_path():
    return resources.files("cosgp") / "data" / "ok_layout.csv"


@functools.lru_cache(maxsize=8)
def _read_layout(path: str, factor: int) -> Layout:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["pixel_row"]), int(rec["pixel_col"]), rec["role"].strip()))
    if not rows:
        raise ConfigError(f"layout file {path} is empty")
    n = max(max(r, c) for r, c, _ in rows) + 1
    masks = {role: np.zeros((n, n), bool) for role in ROLES}
    for r, c, role in rows:
        if role not in ROLES:
            raise ConfigError(f"layout file {path}: unknown role {role!r}")
        masks[role][r, c] = True
    for m in masks.values():
        m.setflags(write=False)
    return Layout(masks, factor).validate()


def load_layout(path=None, factor: int = 3) -> Layout:
    """Read a ``pixel_row,pixel_col,role`` layout file (the packaged one by default).

    A pixel listed on several rows carries every listed role.
    """
    if path is None:
        with resources.as_file(_default_layout_path()) as p:
            return _read_layout(str(p), factor)
    return _read_layout(os.fspath(path), factor)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimDesign:
    """Generative and fitting settings of the O/K study."""

    variant: str = "small"
    n_side: int = 27
    factor: int = 3
    beta: tuple = (1.0, 5.0)
    tau2: float = 1.0
    sigma2: float = 2.0
    phi: float = 5.0
    gamma: float = 0.6
    replicates: int = 100
    layout_path: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.n_side % self.factor:
            raise ConfigError("factor must divide n_side")
        if self.tau2 < 0 or self.sigma2 < 0 or self.phi <= 0 or self.gamma <= 0:
            raise ConfigError("variances must be >= 0; phi and gamma > 0")

    @property
    def layout(self) -> Layout:
        lay = load_layout(self.layout_path, self.factor)
        if lay.n_side != self.n_side:
            raise ConfigError(f"layout is {lay.n_side} pixels wide, design expects {self.n_side}")
        return lay

    @property
    def cell_size(self) -> float:
        return 1.0 / self.n_side


@dataclass(eq=False)
class SimData:
    grid: FineGrid
    obs_regions: list
    y_obs: np.ndarray
    units: dict          # variant -> {name: SupportRegion}
    truth: dict          # variant -> {name: true region mean}
    x: np.ndarray
    omega: np.ndarray
    y_fine: np.ndarray


@functools.lru_cache(maxsize=4)
def _latent_factor(n_side: int, sigma2: float, phi: float) -> np.ndarray:
    grid = FineGrid.regular(n_side, n_side, 1.0 / n_side)
    C = sigma2 * np.exp(-phi * squareform(pdist(grid.centroids)))
    L, _ = chol_psd(C)
    L.setflags(write=False)
    return L


def simulate_dataset(design: SimDesign, seed, replicate: int = 0) -> SimData:
    """One dataset from the fine-grid model on the design's layout.

    The latent field is drawn exactly from the untapered exponential
    covariance.  Truths are the means of the generated pixel outcomes over
    each prediction unit.
    """
    lay = design.layout
    n = design.n_side ** 2
    rng = stream(seed, STAGE_SIMULATE, replicate)
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    e = rng.standard_normal(n)
    omega = _latent_factor(design.n_side, design.sigma2, design.phi) @ z if design.sigma2 > 0 else np.zeros(n)
    b0, b1 = design.beta
    y_fine = b0 + b1 * x + omega + math.sqrt(design.tau2) * e
    grid = FineGrid.regular(design.n_side, design.n_side, design.cell_size, predictors=x[:, None])

    obs = [SupportRegion.from_pixels(cid, pix) for cid, pix in lay.observed_cells()]
    y_obs = np.array([y_fine[list(r.pixels)].mean() for r in obs])
    units, truth = {}, {}
    for v in VARIANTS:
        units[v] = {k: SupportRegion.from_pixels(k, pix, role="prediction") for k, pix in lay.units(v).items()}
        truth[v] = {k: float(y_fine[pix].mean()) for k, pix in lay.units(v).items()}
    return SimData(grid, obs, y_obs, units, truth, x, omega, y_fine)


def replicate_seed(master_seed: int, replicate: int) -> int:
    """Per-replicate fitting seed derived from the master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(zlib.crc32(b"replicate"), int(replicate)))
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# fitting either method
# ---------------------------------------------------------------------------

def build_context(method: str, grid: FineGrid, obs_regions, y, prior: PriorSpec | None = None,
                  gamma: float = 0.6, block: BlockGrid | int = 3):
    """Model context for ``method``; returns ``(context, weight function)``.

    The weight function maps prediction regions to an aggregation map on
    the modelling grid (the fine grid for COS, the coarse grid for Block).
    """
    if method == "cos":
        ctx = ModelContext.build(grid, compute_weights(grid, obs_regions), y, prior, gamma)
        return ctx, lambda regions: compute_weights(grid, regions)
    if method == "block":
        if not isinstance(block, BlockGrid):
            block = upscale_predictors(grid, block)
        ctx = ModelContext.build(block.grid, block_map(block, obs_regions), y, prior, math.inf)
        return ctx, lambda regions: block_map(block, regions)
    raise ConfigError(f"method must be one of {METHODS}, got {method!r}")


def fit_predict(method: str, grid: FineGrid, obs_regions, y, pred_regions, cfg: McmcConfig,
                gamma: float = 0.6, prior: PriorSpec | None = None, block: BlockGrid | int = 3):
    """Fit ``method`` and predict ``pred_regions``.

    Returns ``(PredictiveDraws, PosteriorDraws, seconds)``; ``seconds`` is
    the wall clock of fit plus prediction.
    """
    t0 = time.perf_counter()
    ctx, weights = build_context(method, grid, obs_regions, y, prior, gamma, block)
    post = fit_posterior(ctx, cfg)
    pd = predict(ctx, post, PredictionSet.build(ctx, weights(pred_regions)), cfg.seed)
    return pd, post, time.perf_counter() - t0


def _theta_cover(post, design: SimDesign, level=0.95):
    a = (1 - level) / 2
    lo, hi = np.quantile(post.theta.draws, [a, 1 - a], axis=0)
    true = np.array([design.sigma2, design.tau2, design.phi])
    return {k: bool(lo[j] <= true[j] <= hi[j]) for j, k in enumerate(PARAM_NAMES)}


def run_replicate(design: SimDesign, r: int, methods=METHODS, cfg: McmcConfig = McmcConfig(),
                  master_seed: int = 0, block_grids: dict | None = None) -> dict:
    """Simulate replicate ``r`` and fit every method once.

    Returns ``{method: record}``.  A record holds per-unit draws and truths
    for both variants (keys ``"small"`` / ``"large"``), the fit wall clock
    and the coverage of the true hyperparameters.
    """
    seed = replicate_seed(master_seed, r)
    try:
        data = simulate_dataset(design, master_seed, r)
        pred = [SupportRegion.from_pixels(f"{v}:{k}", u.pixels, role="prediction")
                for v in VARIANTS for k, u in data.units[v].items()]
        rcfg = replace(cfg, seed=seed)
        out = {}
        for m in methods:
            pd, post, secs = fit_predict(m, data.grid, data.obs_regions, data.y_obs, pred, rcfg,
                                         design.gamma, PriorSpec.default(2), design.factor)
            rec = {"replicate": r, "seed": seed, "seconds": secs, "draws": {}, "truth": {},
                   "theta_cover": _theta_cover(post, design),
                   "rhat_max": max(v["rhat"] for v in post.theta.diagnostics["params"].values())
                   if post.theta.diagnostics else float("nan")}
            for v in VARIANTS:
                rec["draws"][v] = {k: pd.column(f"{v}:{k}").copy() for k in data.units[v]}
                rec["truth"][v] = dict(data.truth[v])
            out[m] = rec
        return out
    except CosError as exc:
        raise ReplicateFailed(r, seed, exc) from exc


def _replicate_job(args):
    return run_replicate(*args)


def run_ok_studies(design: SimDesign, methods=METHODS, cfg: McmcConfig = McmcConfig(),
                   master_seed: int = 0, replicates: int | None = None, threads: int = 1) -> list:
    """Run all replicates; returns the per-replicate records in replicate order."""
    R = design.replicates if replicates is None else int(replicates)
    jobs = [(design, r, tuple(methods), cfg, master_seed) for r in range(R)]
    if threads and threads > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_replicate_job, jobs))
    return [_replicate_job(j) for j in jobs]


def summarize_records(records, method: str, variant: str, level: float = 0.95) -> ScoreReport:
    """Score one (method, variant) cell of the study from replicate records."""
    recs = [rec[method] for rec in records]
    names = list(recs[0]["truth"][variant])
    truth = {k: [r["truth"][variant][k] for r in recs] for k in names}
    samples = {k: [r["draws"][variant][k] for r in recs] for k in names}
    rep = ScoreReport.from_predictions(truth, samples, level, n_replicates=len(recs))
    secs = np.array([r["seconds"] for r in recs])
    rep.extra = {
        "method": method,
        "variant": variant,
        "seconds_mean": float(secs.mean()),
        "seconds": secs.tolist(),
        "theta_cover": {k: float(np.mean([r["theta_cover"][k] for r in recs])) for k in PARAM_NAMES},
        "rhat_max": float(np.nanmax([r["rhat_max"] for r in recs])),
    }
    return rep


def run_ok_study(design: SimDesign, method: str = "cos", cfg: McmcConfig = McmcConfig(),
                 master_seed: int = 0, replicates: int | None = None, threads: int = 1) -> ScoreReport:
    """One method on one design variant."""
    recs = run_ok_studies(design, (method,), cfg, master_seed, replicates, threads)
    return summarize_records(recs, method, design.variant)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DataBundle:
    """Observed regions with outcomes on a predictor grid.

    ``block`` is the coarse-cell specification for the comparator: an
    integer block factor or a list of cell regions.
    """

    grid: FineGrid
    regions: list
    y: np.ndarray
    block: object = 3
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if len(self.y) != len(self.regions):
            raise ValueError("one outcome per region is required")


@dataclass(frozen=True)
class CvDesign:
    k: int = 10
    seed: int = 0

    def folds(self, n: int) -> list:
        return make_folds(n, self.k, self.seed)


def make_folds(n: int, k: int, seed: int) -> list:
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most 1."""
    if k < 2:
        raise ConfigError("k must be at least 2")
    if n < k:
        raise TooFewRegions(f"{n} regions cannot be split into {k} folds")
    perm = stream(seed, STAGE_FOLDS, k).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def run_cross_validation(bundle: DataBundle, k: int = 10, method: str = "cos",
                         cfg: McmcConfig = McmcConfig(), gamma: float = 0.6,
                         prior: PriorSpec | None = None, seed: int | None = None,
                         level: float = 0.95) -> ScoreReport:
    """k-fold cross-validation with held-out regions predicted as new supports.

    Scores are pooled over all held-out regions under the target name
    ``"pooled"``; ``extra["folds"]`` lists the test indices of each fold.
    """
    n = len(bundle.regions)
    folds = make_folds(n, k, cfg.seed if seed is None else seed)
    block = bundle.block
    if method == "block" and not isinstance(block, BlockGrid):
        block = upscale_predictors(bundle.grid, block)
    truth, samples, secs = [], [], []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test)
        pred = [bundle.regions[i].with_role("prediction") for i in test]
        fcfg = replace(cfg, seed=replicate_seed(cfg.seed, f))
        pd, _, s = fit_predict(method, bundle.grid, [bundle.regions[i] for i in train], bundle.y[train],
                               pred, fcfg, gamma, prior, block)
        secs.append(s)
        for j, i in enumerate(test):
            truth.append(bundle.y[i])
            samples.append(pd.y_u[:, j])
    rep = ScoreReport.from_predictions({"pooled": truth}, {"pooled": samples}, level, n_replicates=1)
    rep.extra = {"method": method, "k": k, "folds": [f.tolist() for f in folds], "seconds": secs}
    return rep


def synthetic_cv_bundle(seed: int = 0, n_regions: int = 62, design: SimDesign = SimDesign()) -> DataBundle:
    """Dataset drawn from the fine-grid model with ``n_regions`` observed coarse cells.

    Cells are chosen at random among all coarse cells of the design grid.
    """
    n_side, f = design.n_side, design.factor
    n_cells = (n_side // f) ** 2
    if not 1 <= n_regions <= n_cells:
        raise ConfigError(f"n_regions must lie in [1, {n_cells}]")
    rng = stream(seed, STAGE_SIMULATE, "cv")
    n = n_side ** 2
    x = rng.standard_normal(n)
    omega = _latent_factor(n_side, design.sigma2, design.phi) @ rng.standard_normal(n)
    y_fine = design.beta[0] + design.beta[1] * x + omega + math.sqrt(design.tau2) * rng.standard_normal(n)
    grid = FineGrid.regular(n_side, n_side, 1.0 / n_side, predictors=x[:, None])
    cells = coarse_cells(grid, f)
    chosen = np.sort(rng.choice(len(cells), n_regions, replace=False))
    regions = [cells[i] for i in chosen]
    y = np.array([y_fine[list(r.pixels)].mean() for r in regions])
    return DataBundle(grid, regions, y, f, {"y_fine": y_fine})
