"""Fine pixel grids, support regions and the area weights linking them.

A region ``B`` is tied to the pixel lattice through the weights
``h_i = |B ∩ A_i| / |B|``.  Regions are given either as explicit pixel
membership lists (with fractional coverage per pixel) or as polygons that
are clipped against every pixel of their bounding box.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateGeometry, MissingOutcome, RegionOutsideGrid

__all__ = [
    "FineGrid",
    "SupportRegion",
    "AggregationMap",
    "compute_weights",
    "outcome_vector",
    "clip_ring_to_box",
    "ring_area",
]

_LATTICE_RTOL = 1e-9


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class FineGrid:
    """Regular lattice of equal-area square pixels carrying predictor values.

    Parameters
    ----------
    centroids : (n_a, 2) array
        Projected pixel centroids.  They must sit on a lattice of spacing
        ``cell_size``; the grid may be an arbitrary subset of that lattice.
    predictors : (n_a, p) array, optional
        Covariates ``x(A_i)``.  ``p`` may be zero (intercept-only model).
    cell_size : float, optional
        Lattice spacing.  Inferred from the smallest coordinate gap when
        omitted.
    predictor_names : sequence of str, optional
    """

    def __init__(self, centroids, predictors=None, cell_size=None, predictor_names=None):
        centroids = np.asarray(centroids, dtype=float)
        if centroids.ndim != 2 or centroids.shape[1] != 2 or len(centroids) == 0:
            raise ValueError("centroids must be a non-empty (n, 2) array")
        n = len(centroids)
        if predictors is None:
            predictors = np.zeros((n, 0))
        predictors = np.asarray(predictors, dtype=float)
        if predictors.ndim == 1:
            predictors = predictors[:, None]
        if predictors.shape[0] != n:
            raise ValueError("predictors must have one row per pixel")

        if cell_size is None:
            cell_size = _infer_spacing(centroids)
        cell_size = float(cell_size)
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")

        origin = centroids.min(axis=0)
        rel = (centroids - origin) / cell_size
        lattice = np.rint(rel).astype(np.int64)
        scale = max(1.0, float(np.abs(rel).max()))
        if np.abs(rel - lattice).max() > _LATTICE_RTOL * scale:
            raise ValueError("centroids do not lie on a regular lattice with the given cell_size")

        shape = lattice.max(axis=0) + 1
        lookup = np.full(tuple(shape), -1, dtype=np.int64)
        lookup[lattice[:, 0], lattice[:, 1]] = np.arange(n)
        if len(np.unique(lattice[:, 0] * shape[1] + lattice[:, 1])) != n:
            raise ValueError("duplicate pixel centroids")

        self.n_a = n
        self.cell_size = cell_size
        self.origin = _frozen(origin)
        self.centroids = _frozen(centroids)
        self.predictors = _frozen(predictors)
        self.design = _frozen(np.column_stack([np.ones(n), predictors]))
        self.lattice = _frozen(lattice)
        self.predictor_names = tuple(predictor_names) if predictor_names is not None else tuple(
            f"x{j + 1}" for j in range(predictors.shape[1])
        )
        self._lookup = _frozen(lookup)

    @classmethod
    def regular(cls, nx, ny, cell_size=1.0, origin=(0.0, 0.0), predictors=None):
        """Full ``nx`` by ``ny`` lattice; pixel ``iy * nx + ix`` has lower-left corner
        ``origin + (ix, iy) * cell_size``."""
        iy, ix = np.divmod(np.arange(nx * ny), nx)
        cent = np.column_stack([ix + 0.5, iy + 0.5]) * cell_size + np.asarray(origin, float)
        return cls(cent, predictors, cell_size=cell_size)

    @property
    def p(self) -> int:
        return self.predictors.shape[1]

    @property
    def pixel_area(self) -> float:
        return self.cell_size ** 2

    @property
    def shape(self):
        return self._lookup.shape

    def pixel_index(self, ix, iy):
        """Pixel ids at lattice positions; -1 where the lattice has no pixel."""
        ix = np.asarray(ix)
        iy = np.asarray(iy)
        out = np.full(np.broadcast(ix, iy).shape, -1, dtype=np.int64)
        nx, ny = self._lookup.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out[ok] = self._lookup[np.broadcast_to(ix, out.shape)[ok], np.broadcast_to(iy, out.shape)[ok]]
        return out

    def pixel_bounds(self, i):
        """(xmin, ymin, xmax, ymax) of pixel ``i``."""
        c = self.centroids[i]
        h = self.cell_size / 2
        return (c[0] - h, c[1] - h, c[0] + h, c[1] + h)

    def subset(self, pixels) -> "FineGrid":
        """Grid restricted to ``pixels`` (kept in the given order)."""
        pixels = np.asarray(pixels, dtype=np.int64)
        return FineGrid(self.centroids[pixels], self.predictors[pixels], self.cell_size,
                        self.predictor_names)

    def __repr__(self):
        return f"FineGrid(n_a={self.n_a}, p={self.p}, cell_size={self.cell_size:g})"


def _infer_spacing(centroids):
    gaps = []
    for k in range(2):
        u = np.unique(centroids[:, k])
        if len(u) > 1:
            gaps.append(np.diff(u).min())
    if not gaps:
        raise ValueError("cannot infer cell_size from a single pixel; pass it explicitly")
    return float(min(gaps))


@dataclass(frozen=True)
class SupportRegion:
    """An observation or prediction region.

    Exactly one of ``pixels`` (with ``fractions`` of each pixel's area that
    falls inside the region) or ``polygons`` must be given.  ``polygons`` is
    a sequence of polygons, each a sequence of rings ``(k, 2)``; the first
    ring is the exterior, the rest are holes.
    """

    id: str
    pixels: tuple | None = None
    fractions: tuple | None = None
    polygons: tuple | None = None
    role: str = "observed"

    def __post_init__(self):
        if (self.pixels is None) == (self.polygons is None):
            raise ValueError(f"region {self.id!r}: give either pixels or polygons")
        if self.role not in ("observed", "prediction"):
            raise ValueError(f"region {self.id!r}: role must be 'observed' or 'prediction'")
        if self.pixels is not None:
            pix = tuple(int(i) for i in self.pixels)
            frac = (1.0,) * len(pix) if self.fractions is None else tuple(float(f) for f in self.fractions)
            if len(frac) != len(pix):
                raise ValueError(f"region {self.id!r}: fractions and pixels differ in length")
            if any(not (0.0 < f <= 1.0) for f in frac):
                raise ValueError(f"region {self.id!r}: pixel fractions must lie in (0, 1]")
            object.__setattr__(self, "pixels", pix)
            object.__setattr__(self, "fractions", frac)
        else:
            polys = []
            for poly in self.polygons:
                rings = tuple(_frozen(np.asarray(r, dtype=float).reshape(-1, 2)) for r in poly)
                polys.append(rings)
            object.__setattr__(self, "polygons", tuple(polys))

    @classmethod
    def from_pixels(cls, id, pixels, fractions=None, role="observed"):
        return cls(str(id), pixels=tuple(pixels), fractions=fractions, role=role)

    @classmethod
    def from_polygon(cls, id, exterior, holes=(), role="observed"):
        return cls(str(id), polygons=((exterior, *holes),), role=role)

    def with_role(self, role):
        return SupportRegion(self.id, self.pixels, self.fractions, self.polygons, role)


@dataclass(frozen=True)
class AggregationMap:
    """Sparse row-stochastic weights from regions (rows) to pixels (columns).

    Attributes
    ----------
    H : scipy.sparse.csr_matrix, (n_b, n_a)
    D_h_diag : (n_b,) array of per-row sums of squared weights.
    region_ids : tuple of str, the row order.
    areas : (n_b,) array of region areas ``|B|``.
    coverage : (n_b,) fraction of each region's area covered by grid pixels.
    """

    H: sp.csr_matrix
    D_h_diag: np.ndarray
    region_ids: tuple
    areas: np.ndarray
    coverage: np.ndarray = field(default=None)

    @property
    def n_b(self) -> int:
        return self.H.shape[0]

    @property
    def n_a(self) -> int:
        return self.H.shape[1]

    def row(self, l):
        """(pixel ids, weights) of row ``l``."""
        s = slice(self.H.indptr[l], self.H.indptr[l + 1])
        return self.H.indices[s], self.H.data[s]

    def index_of(self, region_id) -> int:
        return self.region_ids.index(region_id)

    def select(self, rows) -> "AggregationMap":
        """Map restricted to the given row indices (in that order)."""
        rows = np.asarray(rows, dtype=np.int64)
        cov = None if self.coverage is None else self.coverage[rows]
        return AggregationMap(self.H[rows].tocsr(), self.D_h_diag[rows],
                              tuple(self.region_ids[i] for i in rows), self.areas[rows], cov)

    @classmethod
    def from_rows(cls, n_a, rows, region_ids, areas, coverage=None):
        """Assemble from ``rows``: list of (pixel ids, unnormalized weights)."""
        indptr = [0]
        indices, data, dh = [], [], []
        for pix, w in rows:
            pix = np.asarray(pix, dtype=np.int64)
            w = np.asarray(w, dtype=float)
            order = np.argsort(pix, kind="stable")
            pix, w = pix[order], w[order]
            if len(pix) > 1 and np.any(np.diff(pix) == 0):
                uniq, inv = np.unique(pix, return_inverse=True)
                w = np.bincount(inv, weights=w)
                pix = uniq
            keep = w > 0
            pix, w = pix[keep], w[keep]
            w = w / w.sum()
            indices.append(pix)
            data.append(w)
            dh.append(float(np.dot(w, w)))
            indptr.append(indptr[-1] + len(pix))
        H = sp.csr_matrix(
            (np.concatenate(data) if data else np.zeros(0),
             np.concatenate(indices) if indices else np.zeros(0, np.int64),
             np.asarray(indptr)),
            shape=(len(rows), n_a),
        )
        areas = np.asarray(areas, dtype=float)
        cov = np.ones(len(rows)) if coverage is None else np.asarray(coverage, dtype=float)
        return cls(H, _frozen(np.asarray(dh)), tuple(region_ids), _frozen(areas), _frozen(cov))


# ---------------------------------------------------------------------------
# polygon clipping
# ---------------------------------------------------------------------------

def ring_area(ring) -> float:
    """Signed shoelace area (positive for counter-clockwise rings)."""
    ring = np.asarray(ring, dtype=float)
    if len(ring) < 3:
        return 0.0
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_half(ring, axis, bound, keep_above):
    # one Sutherland-Hodgman pass against the line coord[axis] == bound
    n = len(ring)
    if n == 0:
        return ring
    c = ring[:, axis] - bound
    inside = c >= 0 if keep_above else c <= 0
    if inside.all():
        return ring
    if not inside.any():
        return ring[:0]
    out = []
    prev = ring[-1]
    prev_in = inside[-1]
    prev_c = c[-1]
    for k in range(n):
        cur, cur_in, cur_c = ring[k], inside[k], c[k]
        if cur_in != prev_in:
            t = prev_c / (prev_c - cur_c)
            out.append(prev + t * (cur - prev))
        if cur_in:
            out.append(cur)
        prev, prev_in, prev_c = cur, cur_in, cur_c
    return np.array(out).reshape(-1, 2)


def clip_ring_to_box(ring, xmin, ymin, xmax, ymax):
    """Clip a (possibly non-convex) ring to an axis-aligned rectangle."""
    r = np.asarray(ring, dtype=float)
    r = _clip_half(r, 0, xmin, True)
    r = _clip_half(r, 0, xmax, False)
    r = _clip_half(r, 1, ymin, True)
    r = _clip_half(r, 1, ymax, False)
    return r


def _polygon_pixel_areas(grid: FineGrid, region: SupportRegion):
    """Intersection area of the region's polygons with every grid pixel.

    Rings are clipped first to lattice columns, then each column strip to
    lattice rows, so every pixel in the bounding box is visited once.
    """
    c = grid.cell_size
    edge = grid.origin - c / 2
    nx, ny = grid.shape
    acc: dict[int, float] = {}
    total = 0.0
    for poly in region.polygons:
        for k, ring in enumerate(poly):
            if len(ring) >= 2 and np.allclose(ring[0], ring[-1]):
                ring = ring[:-1]
            a = abs(ring_area(ring))
            sign = 1.0 if k == 0 else -1.0
            total += sign * a
            if a == 0.0:
                continue
            lo = np.floor((ring.min(axis=0) - edge) / c).astype(int)
            hi = np.ceil((ring.max(axis=0) - edge) / c).astype(int)
            ix0, iy0 = max(lo[0], 0), max(lo[1], 0)
            ix1, iy1 = min(hi[0], nx), min(hi[1], ny)
            for ix in range(ix0, ix1):
                x0 = edge[0] + ix * c
                strip = _clip_half(_clip_half(ring, 0, x0, True), 0, x0 + c, False)
                if len(strip) < 3:
                    continue
                ys = strip[:, 1]
                jy0 = max(iy0, int(np.floor((ys.min() - edge[1]) / c)))
                jy1 = min(iy1, int(np.ceil((ys.max() - edge[1]) / c)))
                cols = grid.pixel_index(np.full(max(jy1 - jy0, 0), ix), np.arange(jy0, jy1))
                for iy, pix in zip(range(jy0, jy1), cols):
                    if pix < 0:
                        continue
                    y0 = edge[1] + iy * c
                    cell = _clip_half(_clip_half(strip, 1, y0, True), 1, y0 + c, False)
                    area = abs(ring_area(cell))
                    if area > 0.0:
                        acc[int(pix)] = acc.get(int(pix), 0.0) + sign * area
    if not total > 0.0:
        raise DegenerateGeometry(f"region {region.id!r} has zero area")
    pix = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
    areas = np.fromiter(acc.values(), dtype=float, count=len(acc))
    # hole subtraction can leave rounding residue on pixels fully inside a hole
    keep = areas > 1e-12 * grid.pixel_area
    return pix[keep], areas[keep], total


def compute_weights(grid: FineGrid, regions: Sequence[SupportRegion], warn: bool = True) -> AggregationMap:
    """Area weights ``h_li = |B_l ∩ A_i| / |B_l|`` for each region.

    Rows are renormalized to sum to one; regions that extend past the
    grid's coverage emit a ``UserWarning`` naming the uncovered fraction.

    Raises
    ------
    RegionOutsideGrid
        A region intersects no pixel.
    DegenerateGeometry
        A polygon region has zero area.
    """
    if len(regions) == 0:
        raise ValueError("no regions given")
    ids = [r.id for r in regions]
    if len(set(ids)) != len(ids):
        raise ValueError("region ids must be unique")
    rows, areas, coverage = [], [], []
    A = grid.pixel_area
    for reg in regions:
        if reg.pixels is not None:
            pix = np.asarray(reg.pixels, dtype=np.int64)
            frac = np.asarray(reg.fractions, dtype=float)
            if len(pix) == 0:
                raise RegionOutsideGrid(f"region {reg.id!r} references no pixel")
            bad = (pix < 0) | (pix >= grid.n_a)
            if bad.any():
                raise RegionOutsideGrid(
                    f"region {reg.id!r} references pixel ids outside the grid: {pix[bad][:5].tolist()}")
            inter = frac * A
            area = float(inter.sum())
        else:
            pix, inter, area = _polygon_pixel_areas(grid, reg)
            if len(pix) == 0:
                raise RegionOutsideGrid(f"region {reg.id!r} intersects no pixel")
        cov = float(inter.sum()) / area
        if warn and cov < 1.0 - 1e-9:
            warnings.warn(f"region {reg.id!r}: {1.0 - cov:.4g} of its area lies outside the grid; "
                          "weights renormalized", UserWarning, stacklevel=2)
        rows.append((pix, inter))
        areas.append(area)
        coverage.append(min(cov, 1.0))
    return AggregationMap.from_rows(grid.n_a, rows, ids, areas, coverage)


def outcome_vector(regions, values: Mapping) -> np.ndarray:
    """Observed outcomes ``y_B`` in row order.

    ``regions`` is an :class:`AggregationMap` or a sequence of regions /
    region ids; ``values`` maps region id to outcome.
    """
    if isinstance(regions, AggregationMap):
        ids = regions.region_ids
    else:
        ids = [r.id if isinstance(r, SupportRegion) else r for r in regions]
    missing = [i for i in ids if i not in values]
    if missing:
        raise MissingOutcome(missing)
    return np.array([float(values[i]) for i in ids])


def pixel_regions(ids: Iterable, pixel_lists: Iterable, role="observed"):
    """Convenience: whole-pixel membership regions."""
    return [SupportRegion.from_pixels(i, p, role=role) for i, p in zip(ids, pixel_lists)]
