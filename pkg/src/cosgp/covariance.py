"""Tapered exponential correlation aggregated over support regions.

Pixel centroids sit on a lattice, so the distance between two pixels is
``cell_size * sqrt(k)`` for an integer squared offset ``k``.  Pair tables
group every contributing pixel pair by region pair and ``k``; evaluating
``C(phi)`` then needs one kernel call per distinct offset and a single
weighted ``bincount``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotPSD, RegionOutsideGrid
from .supports import AggregationMap, FineGrid

__all__ = [
    "KernelConfig",
    "AggregatedCov",
    "PairTable",
    "CholeskyFactor",
    "taper_kernel",
    "tapered_corr",
    "build_CB",
    "build_cross_cov",
    "chol_psd",
    "JITTER_LEVELS",
]

JITTER_LEVELS = (0.0, 1e-10, 1e-8, 1e-6)
_CHUNK_PAIRS = 2_000_000


@dataclass(frozen=True)
class KernelConfig:
    """Exponential decay ``phi`` and taper range ``gamma`` (``inf`` disables tapering)."""

    phi: float
    gamma: float = math.inf

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class AggregatedCov:
    matrix: np.ndarray
    row_regions: tuple
    col_regions: tuple
    sparsity: np.ndarray  # structurally nonzero entries


def taper_kernel(d, gamma):
    """Wendland-type taper ``(1 - d/gamma)^4_+ (1 + 4 d/gamma)``."""
    d = np.asarray(d, dtype=float)
    if math.isinf(gamma):
        out = np.ones_like(d)
    else:
        r = d / gamma
        out = np.where(r < 1.0, (1.0 - np.minimum(r, 1.0)) ** 4 * (1.0 + 4.0 * r), 0.0)
    return out if out.ndim else float(out)


def tapered_corr(d, cfg: KernelConfig):
    """``exp(-phi d) * taper_kernel(d, gamma)``."""
    d = np.asarray(d, dtype=float)
    out = np.exp(-cfg.phi * d) * taper_kernel(d, cfg.gamma)
    return out if np.ndim(out) else float(out)


class PairTable:
    """Pixel-pair structure behind ``C_B``, ``C_BU`` or ``C_UU``.

    Built once per (grid, row map, column map, gamma); :meth:`matrix`
    evaluates the aggregated correlation at any ``phi``.  With
    ``col_map=None`` the table is symmetric and only region pairs with
    ``s >= r`` are stored.
    """

    def __init__(self, grid: FineGrid, row_map: AggregationMap, col_map: AggregationMap | None = None,
                 gamma: float = math.inf):
        self.symmetric = col_map is None
        col_map = row_map if col_map is None else col_map
        for m in (row_map, col_map):
            if m.n_a != grid.n_a:
                raise RegionOutsideGrid("aggregation map built over a different grid")
        self.gamma = float(gamma)
        self.cell_size = grid.cell_size
        self.n_rows = row_map.n_b
        self.n_cols = col_map.n_b
        self.row_regions = row_map.region_ids
        self.col_regions = col_map.region_ids

        flat, keys, weights = _enumerate_pairs(grid, row_map, col_map, self.gamma, self.symmetric)
        ukeys, kidx = np.unique(keys, return_inverse=True)
        self.keys = ukeys
        self.distances = grid.cell_size * np.sqrt(ukeys.astype(float))
        self._taper = taper_kernel(self.distances, self.gamma) if len(ukeys) else np.zeros(0)
        # order by flat index so bincount walks memory monotonically
        order = np.lexsort((kidx, flat))
        self._flat = flat[order]
        self._kidx = kidx[order].astype(np.intp)
        self._w = weights[order]
        self.n_entries = len(self._flat)

        pattern = np.zeros(self.n_rows * self.n_cols, dtype=bool)
        pattern[self._flat] = True
        pattern = pattern.reshape(self.n_rows, self.n_cols)
        if self.symmetric:
            pattern = pattern | pattern.T
        self.sparsity = pattern

    def correlations(self, phi: float) -> np.ndarray:
        """Tapered correlation at each distinct pixel offset."""
        return np.exp(-phi * self.distances) * self._taper

    def matrix(self, phi: float) -> np.ndarray:
        vals = self._w * self.correlations(phi)[self._kidx]
        m = np.bincount(self._flat, weights=vals, minlength=self.n_rows * self.n_cols)
        m = m.reshape(self.n_rows, self.n_cols)
        if self.symmetric:
            m = m + np.triu(m, 1).T
        return m

    def blocks(self):
        """Index sets of the connected components of the nonzero pattern."""
        if not self.symmetric:
            raise ValueError("block structure only defined for symmetric tables")
        n, labels = connected_components(csr_matrix(self.sparsity), directed=False)
        return [np.flatnonzero(labels == k) for k in range(n)]


def _enumerate_pairs(grid, row_map, col_map, gamma, symmetric):
    lat = grid.lattice
    c = grid.cell_size
    kmax = math.inf if math.isinf(gamma) else (gamma / c) ** 2
    reach = math.inf if math.isinf(gamma) else math.ceil(gamma / c)

    Hc = col_map.H
    col_region = np.repeat(np.arange(col_map.n_b), np.diff(Hc.indptr))
    col_pix = Hc.indices
    col_w = Hc.data
    order = np.argsort(lat[col_pix, 0], kind="stable")
    col_region, col_pix, col_w = col_region[order], col_pix[order], col_w[order]
    col_x = lat[col_pix, 0]
    col_y = lat[col_pix, 1]

    n_cols = col_map.n_b
    all_flat, all_key, all_w = [], [], []
    for r in range(row_map.n_b):
        pix_r, w_r = row_map.row(r)
        if len(pix_r) == 0:
            continue
        xr, yr = lat[pix_r, 0], lat[pix_r, 1]
        if math.isinf(reach):
            lo, hi = 0, len(col_pix)
        else:
            lo = np.searchsorted(col_x, xr.min() - reach, side="left")
            hi = np.searchsorted(col_x, xr.max() + reach, side="right")
        sel = np.arange(lo, hi)
        if not math.isinf(reach):
            sel = sel[(col_y[sel] >= yr.min() - reach) & (col_y[sel] <= yr.max() + reach)]
        if symmetric:
            sel = sel[col_region[sel] >= r]
        if len(sel) == 0:
            continue
        step = max(1, _CHUNK_PAIRS // len(pix_r))
        regs, keys, w_acc = [], [], []
        for start in range(0, len(sel), step):
            s = sel[start:start + step]
            dx = xr[:, None] - col_x[s][None, :]
            dy = yr[:, None] - col_y[s][None, :]
            key = dx * dx + dy * dy
            w = w_r[:, None] * col_w[s][None, :]
            reg = np.broadcast_to(col_region[s][None, :], key.shape)
            if not math.isinf(kmax):
                keep = key < kmax
                key, w, reg = key[keep], w[keep], reg[keep]
            else:
                key, w, reg = key.ravel(), w.ravel(), reg.ravel()
            regs.append(reg.astype(np.int64))
            keys.append(key.astype(np.int64))
            w_acc.append(w)
        reg = np.concatenate(regs)
        if len(reg) == 0:
            continue
        key = np.concatenate(keys)
        w = np.concatenate(w_acc)
        base = int(key.max()) + 1
        uniq, inv = np.unique(reg * base + key, return_inverse=True)
        wsum = np.bincount(inv.ravel(), weights=w)
        all_flat.append(r * n_cols + uniq // base)
        all_key.append(uniq % base)
        all_w.append(wsum)
    if not all_flat:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(all_flat), np.concatenate(all_key), np.concatenate(all_w)


def build_CB(grid: FineGrid, amap: AggregationMap, cfg: KernelConfig) -> AggregatedCov:
    """Aggregated correlation matrix of the regions in ``amap`` at ``cfg.phi``."""
    tab = PairTable(grid, amap, None, cfg.gamma)
    return AggregatedCov(tab.matrix(cfg.phi), amap.region_ids, amap.region_ids, tab.sparsity)


def build_cross_cov(grid: FineGrid, obs_map: AggregationMap, pred_map: AggregationMap,
                    cfg: KernelConfig) -> AggregatedCov:
    """Cross correlation between observed rows and prediction columns."""
    tab = PairTable(grid, obs_map, pred_map, cfg.gamma)
    return AggregatedCov(tab.matrix(cfg.phi), obs_map.region_ids, pred_map.region_ids, tab.sparsity)


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

def chol_psd(m, scale=None):
    """Lower Cholesky factor with escalating diagonal jitter.

    Tries jitter ``0, 1e-10, 1e-8, 1e-6`` times ``scale`` (default: the mean
    diagonal).  Returns ``(L, jitter)`` where ``L @ L.T == m + jitter * I``.

    Raises
    ------
    NotPSD
        If the factorization fails at the largest jitter.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if m.shape[0] == 0:
        return np.zeros((0, 0)), 0.0
    if not np.all(np.isfinite(m)):
        raise NotPSD("matrix has non-finite entries")
    if scale is None:
        scale = float(np.mean(np.diag(m)))
    scale = abs(scale) if scale else 1.0
    eye = np.eye(m.shape[0])
    for level in JITTER_LEVELS:
        jit = level * scale
        try:
            L = la.cholesky(m + jit * eye if jit else m, lower=True, check_finite=False)
        except la.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, jit
    raise NotPSD(f"Cholesky failed with jitter up to {JITTER_LEVELS[-1]:g} x {scale:.3g}")


class CholeskyFactor:
    """Cholesky factor of a symmetric matrix, optionally block diagonal.

    ``blocks`` lists index sets whose cross entries are structurally zero;
    each block is factored separately.  All methods work in the original
    ordering.
    """

    def __init__(self, m, blocks=None, scale=None):
        m = np.asarray(m, dtype=float)
        self.n = m.shape[0]
        if scale is None and self.n:
            scale = float(np.mean(np.diag(m)))
        if blocks is None or len(blocks) <= 1:
            self.blocks = None
            self.L, self.jitter = chol_psd(m, scale)
            self.factors = None
        else:
            self.blocks = [np.asarray(b) for b in blocks]
            self.factors = []
            self.jitter = 0.0
            for b in self.blocks:
                L, j = chol_psd(m[np.ix_(b, b)], scale)
                self.factors.append(L)
                self.jitter = max(self.jitter, j)
            self.L = None

    def logdet(self) -> float:
        if self.blocks is None:
            return 2.0 * float(np.sum(np.log(np.diag(self.L))))
        return 2.0 * sum(float(np.sum(np.log(np.diag(L)))) for L in self.factors)

    def half_solve(self, b):
        """``L^{-1} b``."""
        b = np.asarray(b, dtype=float)
        if self.blocks is None:
            return la.solve_triangular(self.L, b, lower=True, check_finite=False)
        out = np.empty_like(b)
        for idx, L in zip(self.blocks, self.factors):
            out[idx] = la.solve_triangular(L, b[idx], lower=True, check_finite=False)
        return out

    def half_solve_t(self, b):
        """``L^{-T} b``."""
        b = np.asarray(b, dtype=float)
        if self.blocks is None:
            return la.solve_triangular(self.L, b, lower=True, trans="T", check_finite=False)
        out = np.empty_like(b)
        for idx, L in zip(self.blocks, self.factors):
            out[idx] = la.solve_triangular(L, b[idx], lower=True, trans="T", check_finite=False)
        return out

    def solve(self, b):
        return self.half_solve_t(self.half_solve(b))

    def mul(self, z):
        """``L z``; maps standard normals to draws with this covariance."""
        z = np.asarray(z, dtype=float)
        if self.blocks is None:
            return self.L @ z
        out = np.empty_like(z)
        for idx, L in zip(self.blocks, self.factors):
            out[idx] = L @ z[idx]
        return out

    def dense(self):
        """The full lower factor (block factors placed on the diagonal)."""
        if self.blocks is None:
            return self.L
        out = np.zeros((self.n, self.n))
        for idx, L in zip(self.blocks, self.factors):
            out[np.ix_(idx, idx)] = L
        return out
