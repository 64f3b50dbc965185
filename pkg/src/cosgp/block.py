"""The coarse-resolution comparator.

The same hierarchical model is fit on a coarse grid whose cells have the
area of an inventory plot.  Predictors are upscaled by area-weighted
averaging, observed plots are assigned to coarse cells, and prediction
regions become weighted averages of coarse cells.  All density, sampling
and prediction code is shared with the fine-grid model; only the grid and
the weights differ.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCell, RegionOutsideGrid
from .model import ModelContext, PriorSpec
from .posterior import PosteriorDraws, PredictionSet, PredictiveDraws, fit_posterior, predict
from .sampler import McmcConfig
from .supports import AggregationMap, FineGrid, SupportRegion, compute_weights

__all__ = ["BlockGrid", "coarse_cells", "upscale_predictors", "block_map", "fit_block", "predict_block"]


@dataclass(eq=False)
class BlockGrid:
    """Coarse modelling grid plus its link to the fine grid.

    Attributes
    ----------
    grid : FineGrid
        The coarse grid; its predictors are the upscaled fine predictors.
    cell_map : AggregationMap
        Rows are coarse cells, columns fine pixels; ``cell_map.H`` holds the
        area weights used for upscaling.
    fine : FineGrid
    """

    grid: FineGrid
    cell_map: AggregationMap
    fine: FineGrid

    @property
    def n_cells(self) -> int:
        return self.grid.n_a


def coarse_cells(grid: FineGrid, factor: int) -> list:
    """Square cells of ``factor x factor`` fine pixels aligned to the lattice.

    Cells at the lattice edge may hold fewer pixels; cells holding none are
    skipped.  Cell ids are ``"c{row}_{col}"`` in coarse lattice units.
    """
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    ix, iy = grid.lattice[:, 0] // factor, grid.lattice[:, 1] // factor
    code = iy * (int(ix.max()) + 1) + ix
    order = np.argsort(code, kind="stable")
    uniq, start = np.unique(code[order], return_index=True)
    groups = np.split(order, start[1:])
    return [SupportRegion.from_pixels(f"c{iy[g[0]]}_{ix[g[0]]}", g) for g in groups]


def upscale_predictors(grid: FineGrid, cells) -> BlockGrid:
    """Coarse grid whose predictors are area-weighted means over each cell.

    ``cells`` is a list of :class:`SupportRegion` tiling the fine grid or an
    integer block factor.  Cell centroids are the area-weighted fine
    centroids and must themselves lie on a regular lattice.
    """
    if isinstance(cells, (int, np.integer)):
        cells = coarse_cells(grid, int(cells))
    try:
        cmap = compute_weights(grid, cells, warn=False)
    except RegionOutsideGrid as exc:
        raise EmptyCell(str(exc)) from None
    empty = [cells[i].id for i in np.flatnonzero(np.diff(cmap.H.indptr) == 0)]
    if empty:
        raise EmptyCell(f"coarse cell(s) cover no fine pixel: {', '.join(empty)}")
    centroids = np.asarray(cmap.H @ grid.centroids)
    preds = np.asarray(cmap.H @ grid.predictors) if grid.p else None
    size = math.sqrt(float(np.median(cmap.areas)))
    coarse = FineGrid(centroids, preds, cell_size=size, predictor_names=grid.predictor_names)
    return BlockGrid(coarse, cmap, grid)


def _region_centroid(fine: FineGrid, H_row):
    pix, w = H_row
    return w @ fine.centroids[pix]


def block_map(block: BlockGrid, regions) -> AggregationMap:
    """Weights of ``regions`` on the coarse grid.

    A region whose area equals the cell area is assigned wholly to the cell
    containing its centroid.  Any other region gets the standard overlap
    weights, computed as ``|B n c| = sum_i |B n A_i| * [A_i in c]`` from the
    fine-pixel overlaps.
    """
    fine = block.fine
    fmap = compute_weights(fine, regions)
    # fine pixel -> coarse cell overlap fractions (cells x pixels, fraction of pixel area)
    member = (block.cell_map.H.multiply(block.cell_map.areas[:, None] / fine.pixel_area)).tocsr()
    cell_area = block.grid.pixel_area
    rows = []
    for l in range(fmap.n_b):
        area = fmap.areas[l]
        if abs(area - cell_area) <= 1e-6 * cell_area:
            c = _cell_at(block, _region_centroid(fine, fmap.row(l)))
            if c is not None:
                rows.append(([c], [1.0]))
                continue
        pix, w = fmap.row(l)
        inter = member[:, pix] @ (w * area)
        inter = np.asarray(inter).ravel()
        nz = np.flatnonzero(inter > 0)
        rows.append((nz, inter[nz]))
    return AggregationMap.from_rows(block.n_cells, rows, fmap.region_ids, fmap.areas, fmap.coverage)


def _cell_at(block: BlockGrid, point):
    g = block.grid
    ij = np.floor((np.asarray(point) - g.origin) / g.cell_size + 0.5 + 1e-9).astype(np.int64)
    c = int(g.pixel_index(ij[0], ij[1]))
    if c < 0:
        return None
    lo = g.centroids[c] - 0.5 * g.cell_size
    if np.all(point >= lo - 1e-9) and np.all(point <= lo + g.cell_size + 1e-9):
        return c
    return None


def fit_block(block: BlockGrid, obs_regions, y, prior: PriorSpec | None = None,
              cfg: McmcConfig = McmcConfig(), gamma: float = math.inf):
    """Fit the coarse-grid model; returns ``(context, posterior draws)``.

    No taper is applied by default.
    """
    amap = block_map(block, obs_regions)
    ctx = ModelContext.build(block.grid, amap, y, prior, gamma)
    return ctx, fit_posterior(ctx, cfg)


def predict_block(ctx: ModelContext, post: PosteriorDraws, block: BlockGrid, pred_regions,
                  seed: int) -> PredictiveDraws:
    """Predict region means as weighted averages of coarse-cell predictions."""
    pmap = block_map(block, pred_regions)
    return predict(ctx, post, PredictionSet.build(ctx, pmap), seed)
