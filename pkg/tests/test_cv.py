import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lirecon.life.cv import (CvError, default_grid, format_summary, kde_life_distribution, kfold,
                             metrics, nested_cv, parse_grid, write_cv_report)
from lirecon.life.features import build_feature_table
from lirecon.life.models import fit_model

GRID = ((5, 30), (10, 40))


def test_metrics_examples():
    assert metrics([100.0, 200.0], [100.0, 200.0]) == (0.0, 0.0)
    assert metrics([100.0], [110.0]) == pytest.approx((10.0, 10.0))
    with pytest.raises(CvError):
        metrics([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(CvError):
        metrics([1.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1.0, 2000.0), st.floats(-2000.0, 2000.0)), min_size=1,
                max_size=30))
def test_metrics_match_direct_sums(pairs):
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    rmse = math.sqrt(sum((b - a) ** 2 for a, b in pairs) / len(pairs))
    mape = 100.0 * sum(abs(b - a) / abs(a) for a, b in pairs) / len(pairs)
    r, m = metrics(t, p)
    assert r == pytest.approx(rmse, rel=1e-12, abs=1e-12)
    assert m == pytest.approx(mape, rel=1e-12, abs=1e-12)


def test_kde_bump_at_repeated_value():
    grid, dens = kde_life_distribution([500.0] * 10, 20.0)
    assert grid[0] == 440.0 and grid[-1] == 560.0
    assert abs(grid[np.argmax(dens)] - 500.0) <= grid[1] - grid[0]


def test_kde_bimodal():
    grid, dens = kde_life_distribution([100.0] * 5 + [900.0] * 5, 30.0, n_points=2001)
    mid = (grid > 300) & (grid < 700)
    assert dens[mid].max() < 1e-6 * dens.max()
    left = grid[np.argmax(np.where(grid < 500, dens, 0))]
    assert abs(left - 100.0) <= grid[1] - grid[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(50.0, 3000.0), min_size=2, max_size=40), st.floats(5.0, 200.0))
def test_kde_integrates_to_one(lives, bw):
    grid, dens = kde_life_distribution(lives, bw)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-12)
    assert np.all(dens >= 0)


def test_kde_errors():
    with pytest.raises(CvError):
        kde_life_distribution([1.0], 1.0)
    with pytest.raises(CvError):
        kde_life_distribution([1.0, 2.0], 0.0)


def test_grid_parsing():
    assert parse_grid("5:40:5,45:80:5") == default_grid()
    assert len(default_grid()) == 64
    assert parse_grid("10-50;20-60") == ((10, 50), (20, 60))
    for bad in ("50-10", "10-50;10-50", "1:2", "a:b:c,1:2:1", "5:40:0,45:80:5"):
        with pytest.raises(CvError):
            parse_grid(bad)


def test_kfold_partitions():
    folds = kfold(range(13), 5, np.random.default_rng(0))
    assert sorted(i for f in folds for i in f) == list(range(13))
    assert sorted(len(f) for f in folds) == [2, 2, 3, 3, 3]
    with pytest.raises(CvError):
        kfold(range(3), 5, np.random.default_rng(0))


@pytest.fixture(scope="module")
def gbr_report(small_fleet):
    return nested_cv(small_fleet, "gbr", GRID, seed=3)


def test_partition_and_leakage(gbr_report, small_fleet):
    ids = [c.cell_id for c in small_fleet.cells]
    assert gbr_report.partition_ok(ids)
    assert gbr_report.leakage_free()
    for f in gbr_report.folds:
        assert f.chosen in GRID
        assert set(f.inner_cells()) == set(f.train_ids)
        for tr, va in f.inner_splits:
            assert not set(tr) & set(va)


def test_deterministic(gbr_report, small_fleet):
    again = nested_cv(small_fleet, "gbr", GRID, seed=3)
    assert again.summary() == gbr_report.summary()
    assert [f.parity for f in again.folds] == [f.parity for f in gbr_report.folds]


def test_single_point_grid_is_plain_cv(small_fleet):
    rep = nested_cv(small_fleet, "lr", [(10, 40)], seed=1)
    rows = {r.cell_id: r for r in build_feature_table(small_fleet, 10, 40)[0]}

    def xy(ids):
        return (np.array([rows[i].features() for i in ids]), np.array([rows[i].label for i in ids]))

    for f in rep.folds:
        assert f.chosen == (10, 40)
        Xs, ys = xy(f.test_ids)
        pred = fit_model(*xy(f.train_ids), "lr").predict(Xs)
        rmse = math.sqrt(np.mean((pred - ys) ** 2))
        mape = 100 * np.mean(np.abs(pred - ys) / ys)
        assert (f.test_rmse, f.test_mape) == pytest.approx((rmse, mape), rel=1e-12)
        inner = []
        for tr, va in f.inner_splits:
            Xv, yv = xy(va)
            inner.append(np.mean((fit_model(*xy(tr), "lr").predict(Xv) - yv) ** 2))
        assert f.inner_mse[(10, 40)] == pytest.approx(np.mean(inner), rel=1e-12)


def test_summary_uses_sample_std(gbr_report):
    s = gbr_report.summary()
    v = [f.test_mape for f in gbr_report.folds]
    assert s["test_mape"] == pytest.approx((np.mean(v), np.std(v, ddof=1)))


def test_shuffled_labels_no_better_than_mean():
    from conftest import SMALL_FLEET
    from lirecon.synthetic import SyntheticFleetSpec, gen_synthetic_fleet
    ds = gen_synthetic_fleet(SyntheticFleetSpec(**{**SMALL_FLEET, "n_cells": 30}))
    cv_mape, base_mape = [], []
    for seed in range(4):
        rep = nested_cv(ds, "lr", GRID, seed=seed, label_shuffle=True)
        shuffled = {cid: t for f in rep.folds for cid, t, _ in f.parity}
        for f in rep.folds:
            m = np.mean([shuffled[i] for i in f.train_ids])
            t = [shuffled[i] for i in f.test_ids]
            base_mape.append(metrics(t, [m] * len(t))[1])
        cv_mape.append(rep.summary()["test_mape"][0])
    assert np.mean(cv_mape) >= np.mean(base_mape)


def test_grid_point_without_curves_is_skipped(small_fleet):
    rep = nested_cv(small_fleet, "lr", [(10, 40), (10, 500)], seed=0)
    for f in rep.folds:
        assert (10, 500) in f.skipped and f.chosen == (10, 40)
    with pytest.raises(CvError):
        nested_cv(small_fleet, "lr", [(10, 500)])
    with pytest.raises(CvError):
        nested_cv(small_fleet, "svm", GRID)


def test_reports_written(tmp_path, gbr_report):
    write_cv_report([gbr_report], tmp_path)
    text = (tmp_path / "summary.txt").read_text()
    assert "GBR" in text and text == format_summary([gbr_report])
    parity = (tmp_path / "parity_gbr.csv").read_text().splitlines()
    assert len(parity) == 1 + sum(len(f.parity) for f in gbr_report.folds)
    assert (tmp_path / "contour_gbr.csv").exists() and (tmp_path / "folds_gbr.csv").exists()
