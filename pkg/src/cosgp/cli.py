"""Command-line interface: ``cosgp fit | predict | simulate | cv | score``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io
from .config import RunConfig, load_config
from .errors import AllRejected, CosError, HashMismatch, NonFinite, NotPSD, ReplicateFailed
from .experiments import (METHODS, VARIANTS, DataBundle, SimDesign, build_context, run_cross_validation,
                          run_ok_studies, summarize_records, synthetic_cv_bundle)
from .metrics import ScoreReport, ci_cover_width, crps_empirical
from .posterior import PredictionSet, aggregate_totals, fit_posterior, predict
from .supports import outcome_vector

log = logging.getLogger("cosgp")

NUMERICAL = (NotPSD, NonFinite, AllRejected, ArithmeticError)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _manifest(cfg: RunConfig, out: Path, command: str, artifacts, **extra):
    man = {
        "command": command,
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "versions": {"cosgp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "artifacts": {Path(a).name: io.sha256_file(a) for a in artifacts},
        **extra,
    }
    cfg.write(out / "config.ini")
    io.write_json(out / "manifest.json", man)
    return man


def _load_observed(cfg: RunConfig):
    cfg.validate(require=("grid", "regions", "outcomes"))
    grid, pix = io.read_grid(cfg.path("grid"))
    regions = io.read_regions(cfg.path("regions"), pix)
    y = outcome_vector(regions, io.read_outcomes(cfg.path("outcomes")))
    data_hashes = {k: io.sha256_file(cfg.path(k)) for k in ("grid", "regions", "outcomes")}
    return grid, pix, regions, y, data_hashes


def _context(cfg: RunConfig, grid, regions, y):
    return build_context(cfg.method, grid, regions, y, cfg.prior(grid.p + 1), cfg.gamma, cfg.factor)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig, args) -> int:
    grid, _, regions, y, hashes = _load_observed(cfg)
    ctx, _ = _context(cfg, grid, regions, y)
    post = fit_posterior(ctx, cfg.mcmc())
    out = cfg.output / "fit"
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "theta.csv", out / "latent.csv", out / "diagnostics.json"]
    io.write_theta(files[0], post.theta)
    io.write_latent(files[1], post)
    diag = dict(post.theta.diagnostics)
    diag["acceptance_rate"] = post.theta.acceptance_rate.tolist()
    io.write_json(files[2], diag)
    _manifest(cfg, out, "fit", files, fit_hash=cfg.fit_hash(hashes))
    for w in diag.get("warnings", []):
        log.warning(w)
    print(f"fit: {post.G} draws written to {out}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    grid, pix, regions, y, hashes = _load_observed(cfg)
    fit_dir = cfg.output / "fit"
    man_path = fit_dir / "manifest.json"
    if not man_path.exists():
        raise HashMismatch(f"no fit artifacts in {fit_dir}; run 'cosgp fit' first")
    man = json.loads(man_path.read_text())
    if man.get("fit_hash") != cfg.fit_hash(hashes):
        raise HashMismatch(f"fit artifacts in {fit_dir} were produced by a different configuration or data")
    cfg.validate(require=("prediction_regions",))
    pred_regions = io.read_regions(cfg.path("prediction_regions"), pix, role="prediction")
    out = cfg.output / "predict"
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "predictive.csv", out / "summary.csv"]
    post = io.read_posterior(fit_dir / "theta.csv", fit_dir / "latent.csv")
    if not pred_regions:
        warnings.warn("prediction set is empty; writing empty outputs")
        io.write_rows(files[0], ("g", "region_id", "value"), [])
        io.write_summary(files[1], (), np.zeros((0, 0)))
        _manifest(cfg, out, "predict", files, fit_hash=man["fit_hash"])
        return 0
    ctx, weights = _context(cfg, grid, regions, y)
    draws = predict(ctx, post, PredictionSet.build(ctx, weights(pred_regions)), cfg.seed)
    io.write_predictive(files[0], draws)
    io.write_summary(files[1], draws.region_ids, draws.y_u)
    gpath = cfg.path("groups")
    if gpath is not None:
        totals = aggregate_totals(draws, io.read_groups(gpath))
        names = sorted(totals)
        files.append(out / "totals.csv")
        io.write_summary(files[-1], names, np.column_stack([totals[k] for k in names]))
    _manifest(cfg, out, "predict", files, fit_hash=man["fit_hash"])
    print(f"predict: {len(draws.region_ids)} regions x {draws.G} draws written to {out}")
    return 0


def _table_rows(records, methods, variant):
    rows = []
    for m in methods:
        rep = summarize_records(records, m, variant)
        rows.append((m, rep))
    return rows


def cmd_simulate(cfg: RunConfig, args) -> int:
    variants = VARIANTS if cfg.get("simulate", "design") == "both" else (cfg.get("simulate", "design"),)
    method = args.method or cfg.method
    methods = METHODS[::-1] if method == "both" else (method,)
    reps = int(cfg.get("simulate", "replicates"))
    layout = cfg.path("layout")
    design = SimDesign(variant=variants[0], replicates=reps, gamma=cfg.gamma,
                       layout_path=str(layout) if layout else None)
    records = run_ok_studies(design, methods, cfg.mcmc(), cfg.seed, reps, cfg.threads)

    out = cfg.output / "simulate"
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "replicates.csv", out / "draws.csv"]
    rep_rows, draw_rows, time_rows = [], [], []
    for rec in records:
        for m in methods:
            r = rec[m]
            time_rows.append((r["replicate"], m, float(r["seconds"])))
            for v in variants:
                for unit, d in r["draws"][v].items():
                    truth = r["truth"][v][unit]
                    covered, width = ci_cover_width(d, truth)
                    lo, hi = np.quantile(d, [0.025, 0.975])
                    rep_rows.append((r["replicate"], r["seed"], m, v, unit, float(truth), float(d.mean()),
                                     float(lo), float(hi), int(covered), float(width),
                                     float(crps_empirical(d, truth))))
                    draw_rows.extend((r["replicate"], m, v, unit, g, float(x)) for g, x in enumerate(d))
    io.write_rows(files[0], ("replicate", "seed", "method", "variant", "unit", "truth", "mean", "lower",
                             "upper", "covered", "width", "crps"), rep_rows)
    io.write_rows(files[1], ("replicate", "method", "variant", "unit", "g", "value"), draw_rows)
    io.write_rows(out / "timing.csv", ("replicate", "method", "seconds"), time_rows)
    for v in variants:
        header = None
        lines = []
        reports = {}
        for m, rep in _table_rows(records, methods, v):
            row = rep.table_row(["O", "K"])
            header = header or ("method", *row)
            lines.append((m, *(float(x) for x in row.values())))
            reports[m] = rep
            (out / f"report_{v}_{m}.json").write_text(rep.to_json() + "\n")
        files.append(out / f"table_{v}.csv")
        io.write_rows(files[-1], header, lines)
        _print_table(f"O/K study, {v} units, {reps} replicates", header, lines)
    _manifest(cfg, out, "simulate", files, replicates=reps, methods=list(methods), variants=list(variants))
    return 0


def cmd_cv(cfg: RunConfig, args) -> int:
    k = int(cfg.get("cv", "k"))
    method = args.method or cfg.method
    methods = METHODS[::-1] if method == "both" else (method,)
    if cfg.path("grid") is not None:
        grid, _, regions, y, _ = _load_observed(cfg)
        bundle = DataBundle(grid, regions, y, cfg.factor)
    else:
        bundle = synthetic_cv_bundle(cfg.seed, int(cfg.get("cv", "synthetic_regions")))
    out = cfg.output / "cv"
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for m in methods:
        rep = run_cross_validation(bundle, k, m, cfg.mcmc(), cfg.gamma, cfg.prior(bundle.grid.p + 1))
        s = rep.per_target["pooled"]
        lines.append((m, float(s["ci_cover"]), float(s["rmspe"]), float(s["mpe"]), float(s["crps"]),
                      float(s["ci_width"])))
        (out / f"report_{m}.json").write_text(rep.to_json() + "\n")
    header = ("method", "CI cover", "RMSPE", "MPE", "CRPS", "CI width")
    io.write_rows(out / "table.csv", header, lines)
    _print_table(f"{k}-fold cross-validation, {len(bundle.regions)} regions", header, lines)
    _manifest(cfg, out, "cv", [out / "table.csv"], k=k)
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    draws = io.read_predictive(args.draws)
    truth = io.read_outcomes(args.truth)
    ids = [r for r in draws if r in truth]
    if not ids:
        raise CosError("no region appears in both the draws and the truth file")
    rep = ScoreReport.from_predictions({"pooled": [truth[r] for r in ids]},
                                       {"pooled": [draws[r] for r in ids]}, args.level, n_replicates=1)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _print_table(title, header, lines):
    print(title)
    print("  ".join(f"{h:>11}" for h in header))
    for ln in lines:
        print("  ".join(f"{v:>11.3f}" if isinstance(v, float) else f"{v:>11}" for v in ln))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cosgp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cosgp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("-o", "--out", help="output directory (paths.output)")
        sp.add_argument("--seed", type=int, help="master seed (run.seed)")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name, fn, hlp in (("fit", cmd_fit, "sample the posterior of the observed data"),
                          ("predict", cmd_predict, "posterior predictive draws for new regions")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--method", choices=METHODS)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("simulate", help="run the O/K simulation study")
    common(sp)
    sp.add_argument("--design", choices=(*VARIANTS, "both"))
    sp.add_argument("--method", choices=(*METHODS, "both"))
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("cv", help="k-fold cross-validation (synthetic data unless paths.grid is set)")
    common(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--method", choices=(*METHODS, "both"))
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("score", help="score predictive draws against true values")
    common(sp)
    sp.add_argument("--draws", required=True, help="long-format g,region_id,value CSV")
    sp.add_argument("--truth", required=True, help="region_id,value CSV")
    sp.add_argument("--level", type=float, default=0.95)
    sp.set_defaults(func=cmd_score)
    return p


def _overrides(args):
    ov = list(args.set)
    if args.out:
        ov.append(f"paths.output={args.out}")
    if args.seed is not None:
        ov.append(f"run.seed={args.seed}")
    if getattr(args, "method", None) in METHODS:
        ov.append(f"run.method={args.method}")
    if getattr(args, "design", None):
        ov.append(f"simulate.design={args.design}")
    if getattr(args, "replicates", None) is not None:
        ov.append(f"simulate.replicates={args.replicates}")
    if getattr(args, "threads", None) is not None:
        ov.append(f"run.threads={args.threads}")
    if getattr(args, "k", None) is not None:
        ov.append(f"cv.k={args.k}")
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.validate()
        return args.func(cfg, args)
    except ReplicateFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, NUMERICAL) else 1
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (CosError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
