import numpy as np
import pytest

from cosgp.errors import ConfigError, TooFewRegions
from cosgp.experiments import (
    SimDesign,
    load_layout,
    make_folds,
    replicate_seed,
    run_cross_validation,
    run_replicate,
    simulate_dataset,
    summarize_records,
    synthetic_cv_bundle,
)
from cosgp.sampler import McmcConfig

FAST = McmcConfig(n_chains=2, warmup=100, sampling=100, thin=5, seed=0)


def test_packaged_layout_invariants():
    lay = load_layout()
    assert lay.n_side == 27
    small = lay.units("small")
    assert len(small["O"]) == 38 and len(small["K"]) == 48
    assert not np.intersect1d(small["O"], small["K"]).size
    cells = lay.observed_cells()
    assert cells and all(len(p) == 9 for _, p in cells)
    large = lay.units("large")
    for name in ("O", "K"):
        assert np.all(np.isin(small[name], large[name]))
        assert len(large[name]) > len(small[name])
    assert not np.intersect1d(large["O"], large["K"]).size


def _write_layout(path, rows):
    path.write_text("pixel_row,pixel_col,role\n" + "".join(f"{r},{c},{role}\n" for r, c, role in rows))
    return path


def _toy_rows(o=38, k=48):
    rows = [(r, c, "O") for r in range(0, 5) for c in range(0, 8)][:o]
    rows += [(r, c, "K") for r in range(10, 16) for c in range(0, 8)][:k]
    rows += [(r, c, "observed") for r in range(18, 21) for c in range(0, 3)]
    rows += [(26, 26, "none")]
    return rows


def test_layout_validation_errors(tmp_path):
    load_layout(_write_layout(tmp_path / "ok.csv", _toy_rows()))
    with pytest.raises(ConfigError, match="37 'O' pixels"):
        load_layout(_write_layout(tmp_path / "o.csv", _toy_rows(o=37)))
    partial = _toy_rows() + [(22, 0, "observed")]
    with pytest.raises(ConfigError, match="partly observed"):
        load_layout(_write_layout(tmp_path / "p.csv", partial))
    with pytest.raises(ConfigError, match="unknown role"):
        load_layout(_write_layout(tmp_path / "r.csv", _toy_rows() + [(0, 0, "red")]))


def test_noise_free_generation():
    d = simulate_dataset(SimDesign(tau2=0.0, sigma2=0.0), seed=3)
    np.testing.assert_array_equal(d.y_fine, 1.0 + 5.0 * d.x)
    assert np.all(d.omega == 0.0)


def test_latent_variance():
    design = SimDesign()
    om = np.array([simulate_dataset(design, seed=11, replicate=r).omega for r in range(200)])
    assert np.mean(om ** 2) == pytest.approx(2.0, rel=0.10)


def test_truth_and_observations_are_pixel_means():
    d = simulate_dataset(SimDesign(), seed=5)
    lay = load_layout()
    for v in ("small", "large"):
        for name, pix in lay.units(v).items():
            assert d.truth[v][name] == pytest.approx(d.y_fine[pix].mean(), abs=1e-12)
            assert list(d.units[v][name].pixels) == list(pix)
    for reg, yb in zip(d.obs_regions, d.y_obs):
        assert len(reg.pixels) == 9
        assert yb == pytest.approx(d.y_fine[list(reg.pixels)].mean(), abs=1e-12)


def test_simulation_is_deterministic():
    a = simulate_dataset(SimDesign(), seed=9, replicate=4)
    b = simulate_dataset(SimDesign(), seed=9, replicate=4)
    c = simulate_dataset(SimDesign(), seed=9, replicate=5)
    np.testing.assert_array_equal(a.y_fine, b.y_fine)
    assert not np.array_equal(a.y_fine, c.y_fine)
    assert replicate_seed(1, 2) == replicate_seed(1, 2) != replicate_seed(1, 3)


def test_folds_partition():
    folds = make_folds(62, 10, seed=1)
    assert len(folds) == 10
    assert sorted(np.concatenate(folds).tolist()) == list(range(62))
    assert {len(f) for f in folds} == {6, 7}
    loo = make_folds(7, 7, seed=0)
    assert all(len(f) == 1 for f in loo)
    with pytest.raises(TooFewRegions):
        make_folds(5, 10, seed=0)
    np.testing.assert_array_equal(make_folds(30, 4, 2)[0], make_folds(30, 4, 2)[0])


def test_replicate_record_and_summary():
    design = SimDesign()
    recs = [run_replicate(design, r, ("cos", "block"), FAST, master_seed=7) for r in range(2)]
    for rec in recs:
        for m in ("cos", "block"):
            for v in ("small", "large"):
                for u in ("O", "K"):
                    assert rec[m]["draws"][v][u].shape == (FAST.n_draws,)
            assert rec[m]["seconds"] > 0
    rep = summarize_records(recs, "cos", "small")
    assert rep.n_replicates == 2
    assert set(rep.table_row(["O", "K"])) >= {"RMSPE O", "CI cover K"}
    again = run_replicate(design, 1, ("cos",), FAST, master_seed=7)
    np.testing.assert_array_equal(again["cos"]["draws"]["small"]["O"], recs[1]["cos"]["draws"]["small"]["O"])


@pytest.mark.parametrize("method", ["cos", "block"])
def test_synthetic_cross_validation_coverage(method):
    bundle = synthetic_cv_bundle(seed=2)
    assert len(bundle.regions) == 62
    cfg = McmcConfig(seed=4)
    rep = run_cross_validation(bundle, k=10, method=method, cfg=cfg)
    pooled = rep.per_target["pooled"]
    assert pooled["n"] == 62
    assert 0.85 <= pooled["ci_cover"] <= 1.0
    assert pooled["crps"] > 0
