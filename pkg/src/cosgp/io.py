"""Reading inputs and writing artifacts.

Formats
-------
grid CSV        ``pixel_id,x,y,<predictor columns>``; x, y are pixel centroids.
regions CSV     ``region_id,pixel_id[,fraction]``; one row per covered pixel.
regions GeoJSON FeatureCollection of (Multi)Polygons with an ``id`` property.
outcomes CSV    ``region_id,value``.
groups CSV      ``region_id,group``.
theta draws     ``chain,iter,sigma2,tau2,phi,log_post``.
latent draws    ``g,chain,iter,beta_0..beta_p,omega[<region id>]...``.
predictive      long format ``g,region_id,value``.
summary CSV     ``region_id,mean,median,lower,upper``.

Floats are written with 17 significant digits, so a file read back
reproduces the in-memory values and reruns are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .posterior import PosteriorDraws, PredictiveDraws
from .sampler import PARAM_NAMES, ThetaDraws
from .supports import FineGrid, SupportRegion

__all__ = [
    "read_grid",
    "read_regions",
    "read_outcomes",
    "read_groups",
    "write_theta",
    "read_theta",
    "write_latent",
    "read_posterior",
    "write_predictive",
    "read_predictive",
    "write_summary",
    "write_rows",
    "sha256_file",
    "write_json",
]


def _f(x) -> str:
    return format(float(x), ".17g")


def _open_csv(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return open(path, newline="")


def _require(fields, need, path):
    missing = [c for c in need if c not in (fields or [])]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def read_grid(path):
    """Returns ``(FineGrid, pixel id -> row index)``."""
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("pixel_id", "x", "y"), path)
        names = [c for c in rd.fieldnames if c not in ("pixel_id", "x", "y")]
        ids, xy, preds = [], [], []
        for rec in rd:
            ids.append(rec["pixel_id"].strip())
            xy.append((float(rec["x"]), float(rec["y"])))
            preds.append([float(rec[c]) for c in names])
    if not ids:
        raise ConfigError(f"{path}: no pixels")
    index = {p: i for i, p in enumerate(ids)}
    if len(index) != len(ids):
        raise ConfigError(f"{path}: duplicate pixel_id")
    P = np.asarray(preds, dtype=float).reshape(len(ids), len(names))
    try:
        grid = FineGrid(np.asarray(xy), P, predictor_names=names)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return grid, index


def read_regions(path, pixel_index=None, role="observed") -> list:
    """Regions from a pixel-membership CSV or a GeoJSON polygon file, in file order."""
    path = Path(path)
    if path.suffix.lower() in (".geojson", ".json"):
        return _read_geojson(path, role)
    if pixel_index is None:
        raise ConfigError(f"{path}: pixel-membership regions need the grid's pixel ids")
    order, pix, frac = [], {}, {}
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("region_id", "pixel_id"), path)
        has_frac = "fraction" in rd.fieldnames
        for rec in rd:
            rid = rec["region_id"].strip()
            p = rec["pixel_id"].strip()
            if p not in pixel_index:
                raise ConfigError(f"{path}: region {rid!r} references unknown pixel {p!r}")
            if rid not in pix:
                order.append(rid)
                pix[rid], frac[rid] = [], []
            pix[rid].append(pixel_index[p])
            frac[rid].append(float(rec["fraction"]) if has_frac and rec["fraction"] else 1.0)
    try:
        return [SupportRegion.from_pixels(r, pix[r], frac[r], role=role) for r in order]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _read_geojson(path, role):
    with open(path) as fh:
        doc = json.load(fh)
    feats = doc.get("features", [doc] if doc.get("type") == "Feature" else [])
    out = []
    for k, ft in enumerate(feats):
        props = ft.get("properties") or {}
        rid = str(props.get("id", ft.get("id", k)))
        geom = ft.get("geometry") or {}
        if geom.get("type") == "Polygon":
            polys = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            polys = geom["coordinates"]
        else:
            raise ConfigError(f"{path}: feature {rid!r} is not a polygon")
        out.append(SupportRegion(rid, polygons=tuple(tuple(poly) for poly in polys), role=role))
    return out


def read_outcomes(path) -> dict:
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("region_id", "value"), path)
        return {rec["region_id"].strip(): float(rec["value"]) for rec in rd}


def read_groups(path) -> dict:
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("region_id", "group"), path)
        return {rec["region_id"].strip(): rec["group"].strip() for rec in rd}


# ---------------------------------------------------------------------------
# draws
# ---------------------------------------------------------------------------

def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_theta(path, theta: ThetaDraws):
    rows = ((int(c), int(i), *map(float, d), float(lp))
            for c, i, d, lp in zip(theta.chain_ids, theta.iters, theta.draws, theta.log_post))
    write_rows(path, ("chain", "iter", *PARAM_NAMES, "log_post"), rows)


def read_theta(path) -> ThetaDraws:
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("chain", "iter", *PARAM_NAMES, "log_post"), path)
        recs = list(rd)
    chain = np.array([int(r["chain"]) for r in recs])
    it = np.array([int(r["iter"]) for r in recs])
    draws = np.array([[float(r[k]) for k in PARAM_NAMES] for r in recs]).reshape(-1, 3)
    lp = np.array([float(r["log_post"]) for r in recs])
    n_chains = len(np.unique(chain)) if len(chain) else 0
    return ThetaDraws(draws, chain, it, lp, np.full(n_chains, np.nan))


def write_latent(path, post: PosteriorDraws):
    k = post.beta.shape[1]
    header = ("g", "chain", "iter", *(f"beta_{j}" for j in range(k)),
              *(f"omega[{r}]" for r in post.region_ids))
    th = post.theta
    rows = ((g, int(th.chain_ids[g]), int(th.iters[g]), *map(float, post.beta[g]), *map(float, post.omega_B[g]))
            for g in range(post.G))
    write_rows(path, header, rows)


def read_posterior(theta_path, latent_path) -> PosteriorDraws:
    theta = read_theta(theta_path)
    with _open_csv(latent_path) as fh:
        rd = csv.reader(fh)
        header = next(rd)
        vals = np.array([[float(v) for v in row] for row in rd]).reshape(-1, len(header))
    bcols = [i for i, h in enumerate(header) if h.startswith("beta_")]
    ocols = [i for i, h in enumerate(header) if h.startswith("omega[")]
    ids = tuple(header[i][len("omega["):-1] for i in ocols)
    if len(vals) != theta.G:
        raise ConfigError(f"{latent_path}: {len(vals)} draws but {theta.G} theta draws")
    return PosteriorDraws(theta, vals[:, bcols], vals[:, ocols], ids)


def write_predictive(path, draws: PredictiveDraws):
    rows = ((g, r, float(draws.y_u[g, j])) for g in range(draws.G) for j, r in enumerate(draws.region_ids))
    write_rows(path, ("g", "region_id", "value"), rows)


def read_predictive(path) -> dict:
    """Long-format draws as ``{region_id: array of draws}`` (ordered by g)."""
    out = {}
    with _open_csv(path) as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("g", "region_id", "value"), path)
        for rec in rd:
            out.setdefault(rec["region_id"].strip(), []).append((int(rec["g"]), float(rec["value"])))
    return {k: np.array([v for _, v in sorted(vs)]) for k, vs in out.items()}


def write_summary(path, ids, samples, level: float = 0.95):
    """Per-column mean, median and equal-tailed interval of a (G, n) draw array."""
    ids = tuple(ids)
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(-1, len(ids)) if ids else np.zeros((0, 0))
    a = round((1.0 - level) / 2.0, 12)  # 0.025, not 0.025000000000000022
    if samples.size and ids:
        lo, med, hi = np.quantile(samples, [a, 0.5, 1.0 - a], axis=0)
        mean = samples.mean(axis=0)
    else:
        lo = med = hi = mean = np.zeros(len(ids))
    write_rows(path, ("region_id", "mean", "median", "lower", "upper"),
               ((r, float(mean[j]), float(med[j]), float(lo[j]), float(hi[j])) for j, r in enumerate(ids)))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, os.PathLike):
        return os.fspath(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
