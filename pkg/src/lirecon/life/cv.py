"""Nested cross-validation over the (n_start, n_end) feature window, plus
metrics, a cycle-life KDE and Table-1-style report files."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import CyclingDataset
from .features import EOL_THRESHOLD, build_feature_table, cycle_life_label
from .models import KINDS, ModelSettings, fit_model


class CvError(ValueError):
    pass


def default_grid():
    return tuple((s, e) for s in range(5, 41, 5) for e in range(45, 81, 5))


def parse_grid(text: str):
    """``"5:40:5,45:80:5"`` (start:stop:step for n_start then n_end, stop
    inclusive) or an explicit list ``"10-50;20-60"``."""
    text = text.strip()
    try:
        if ";" in text or ("-" in text and ":" not in text):
            pts = []
            for item in text.split(";"):
                a, b = item.split("-")
                pts.append((int(a), int(b)))
            return validate_grid(pts)
        ranges = []
        for part in text.split(","):
            lo, hi, step = (int(v) for v in part.split(":"))
            if step <= 0:
                raise CvError(f"grid step must be positive in {part!r}")
            ranges.append(range(lo, hi + 1, step))
        if len(ranges) != 2:
            raise CvError("grid range spec needs two comma-separated ranges")
        return validate_grid([(s, e) for s in ranges[0] for e in ranges[1]])
    except ValueError as exc:
        if isinstance(exc, CvError):
            raise
        raise CvError(f"cannot parse grid {text!r}") from None


def validate_grid(grid):
    grid = tuple((int(s), int(e)) for s, e in grid)
    if not grid:
        raise CvError("grid is empty")
    bad = [p for p in grid if not p[0] < p[1]]
    if bad:
        raise CvError(f"grid points need n_start < n_end: {bad[:3]}")
    if len(set(grid)) != len(grid):
        raise CvError("grid has duplicate points")
    return grid


# --- metrics -----------------------------------------------------------------

def metrics(true, pred):
    """``(RMSE, MAPE in percent)``."""
    t = np.asarray(true, dtype=float)
    p = np.asarray(pred, dtype=float)
    if t.shape != p.shape or t.ndim != 1 or t.size == 0:
        raise CvError("true and pred must be equal-length non-empty vectors")
    if np.any(t == 0):
        raise CvError("MAPE undefined: a true value is zero")
    d = p - t
    return float(np.sqrt(np.mean(d * d))), float(np.mean(np.abs(d) / np.abs(t)) * 100.0)


# --- KDE ---------------------------------------------------------------------

def kde_life_distribution(lives, bandwidth: float, n_points: int = 512):
    """Gaussian KDE on a uniform grid from ``min - 3 bw`` to ``max + 3 bw``.

    The grid truncates the tails, so the density is rescaled to integrate
    to one under the trapezoid rule on that grid.
    """
    x = np.asarray(lives, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise CvError("need at least 2 values")
    if not bandwidth > 0:
        raise CvError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * bandwidth, x.max() + 3 * bandwidth, n_points)
    u = (grid[:, None] - x[None, :]) / bandwidth
    dens = np.exp(-0.5 * u * u).sum(1) / (x.size * bandwidth * math.sqrt(2 * math.pi))
    dens /= np.trapezoid(dens, grid)
    return grid, dens


# --- nested CV ---------------------------------------------------------------

def kfold(ids, k: int, rng):
    """Shuffle ``ids`` with ``rng`` and split into ``k`` near-equal folds."""
    ids = list(ids)
    if len(ids) < k:
        raise CvError(f"need at least {k} cells for {k} folds, got {len(ids)}")
    perm = rng.permutation(len(ids))
    return [tuple(ids[i] for i in sorted(part)) for part in np.array_split(perm, k)]


@dataclass
class OuterFold:
    fold: int
    train_ids: tuple
    test_ids: tuple
    inner_splits: list            # [(inner train ids, inner val ids)]
    inner_mse: dict               # {(n_start, n_end): mean inner-validation MSE}
    skipped: dict                 # {(n_start, n_end): reason}
    chosen: tuple
    train_val_rmse: float
    train_val_mape: float
    test_rmse: float
    test_mape: float
    parity: list                  # [(cell_id, true, predicted)]
    test_excluded: list = field(default_factory=list)

    def inner_cells(self):
        seen = set()
        for tr, va in self.inner_splits:
            seen.update(tr)
            seen.update(va)
        return seen


@dataclass
class NestedCvReport:
    kind: str
    grid: tuple
    seed: int
    folds: list
    excluded: list                # [(cell_id, reason)] before splitting

    def _agg(self, name):
        v = np.array([getattr(f, name) for f in self.folds])
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    def summary(self):
        return {n: self._agg(n) for n in ("train_val_rmse", "train_val_mape", "test_rmse", "test_mape")}

    def partition_ok(self, all_ids) -> bool:
        tests = [set(f.test_ids) for f in self.folds]
        union = set().union(*tests)
        disjoint = sum(len(t) for t in tests) == len(union)
        return disjoint and union == set(all_ids)

    def leakage_free(self) -> bool:
        return all(not (set(f.test_ids) & f.inner_cells()) and set(f.train_ids) >= f.inner_cells()
                   for f in self.folds)

    def cell_ids(self):
        return tuple(sorted(set().union(*(set(f.test_ids) for f in self.folds))))


class _FeatureCache:
    """Feature rows per grid point, keyed by cell. Rows depend on one cell
    only, so sharing them across folds leaks nothing."""

    def __init__(self, ds, labels, threshold, grid_size):
        self.ds, self.labels, self.threshold, self.grid_size = ds, labels, threshold, grid_size
        self._rows = {}

    def get(self, point):
        if point not in self._rows:
            rows, excluded = build_feature_table(self.ds, point[0], point[1], self.threshold,
                                                 self.grid_size, self.labels)
            self._rows[point] = ({r.cell_id: r for r in rows}, dict(excluded))
        return self._rows[point]

    def xy(self, point, ids):
        rows = self.get(point)[0]
        X = np.array([rows[i].features() for i in ids])
        y = np.array([rows[i].label for i in ids])
        return X, y


def nested_cv(ds: CyclingDataset, kind: str, grid=None, outer: int = 5, inner: int = 5,
              seed: int = 0, settings: Optional[ModelSettings] = None,
              threshold: float = EOL_THRESHOLD, grid_size: int = 1000,
              label_shuffle: bool = False, map_fn=map) -> NestedCvReport:
    """Nested CV of one model kind.

    Outer folds split the uncensored cells. In each, the inner loop scores
    every grid point by mean validation MSE over ``inner`` folds of the
    training cells; a point is skipped for that split if any training cell
    lacks it. The best point is refit on all training cells and scored on
    the outer test cells. ``label_shuffle`` permutes labels among cells
    (a leakage sanity check).
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise CvError(f"unknown model kind {kind!r}")
    grid = validate_grid(grid if grid is not None else default_grid())
    labels, excluded, eligible = {}, [], []
    for cell in ds.cells:
        lab = cycle_life_label(cell.discharge_capacities(), threshold)
        labels[cell.cell_id] = lab
        if lab.censored:
            excluded.append((cell.cell_id, "censored"))
        else:
            eligible.append(cell.cell_id)
    if label_shuffle:
        ids = list(eligible)
        perm = np.random.default_rng([seed, 7919]).permutation(len(ids))
        labels = dict(labels)
        orig = [labels[i] for i in ids]
        for i, j in zip(ids, perm):
            labels[i] = orig[j]
    if len(eligible) < outer:
        raise CvError(f"{len(eligible)} uncensored cells, fewer than {outer} outer folds")
    cache = _FeatureCache(ds, labels, threshold, grid_size)
    test_folds = kfold(eligible, outer, np.random.default_rng(seed))
    settings = settings or ModelSettings()

    def run(fold):
        test_ids = test_folds[fold]
        train_ids = tuple(i for i in eligible if i not in set(test_ids))
        splits = kfold(train_ids, inner, np.random.default_rng([seed, fold + 1]))
        inner_splits = [(tuple(i for i in train_ids if i not in set(v)), v) for v in splits]
        inner_mse, skipped, val_metrics = {}, {}, {}
        for point in grid:
            rows, why = cache.get(point)
            missing = [i for i in train_ids if i not in rows]
            if missing:
                skipped[point] = f"{len(missing)} training cell(s) lack features: " + \
                    why.get(missing[0], "")
                continue
            mses, rm, mp = [], [], []
            for tr, va in inner_splits:
                Xt, yt = cache.xy(point, tr)
                Xv, yv = cache.xy(point, va)
                pred = fit_model(Xt, yt, kind, settings, seed).predict(Xv)
                mses.append(float(np.mean((pred - yv) ** 2)))
                r, m = metrics(yv, pred)
                rm.append(r)
                mp.append(m)
            inner_mse[point] = float(np.mean(mses))
            val_metrics[point] = (float(np.mean(rm)), float(np.mean(mp)))
        if not inner_mse:
            raise CvError(f"outer fold {fold}: no feasible grid point")
        # strict minimum in grid order
        chosen = min(inner_mse, key=lambda p: (inner_mse[p], grid.index(p)))
        rows, why = cache.get(chosen)
        model = fit_model(*cache.xy(chosen, train_ids), kind, settings, seed)
        test_ok = [i for i in test_ids if i in rows]
        test_excluded = [(i, why.get(i, "")) for i in test_ids if i not in rows]
        if not test_ok:
            raise CvError(f"outer fold {fold}: no test cell has features at {chosen}")
        Xs, ys = cache.xy(chosen, test_ok)
        pred = model.predict(Xs)
        rmse, mape = metrics(ys, pred)
        return OuterFold(fold, train_ids, test_ids, inner_splits, inner_mse, skipped, chosen,
                         *val_metrics[chosen], rmse, mape,
                         [(i, float(t), float(p)) for i, t, p in zip(test_ok, ys, pred)],
                         test_excluded)

    folds = list(map_fn(run, range(outer)))
    return NestedCvReport(kind, grid, seed, folds, excluded)


# --- report files -----------------------------------------------------------

MODEL_LABELS = {"lr": "LR", "gpr": "GPR", "gbr": "GBR"}


def format_summary(reports) -> str:
    """Plain-text table: one row per model, train-validation and test RMSE
    (cycles) and MAPE (%), each as mean +/- std over outer folds."""
    head = f"{'Model':<6} {'Train-val RMSE':>18} {'Train-val MAPE (%)':>20} " \
           f"{'Test RMSE':>18} {'Test MAPE (%)':>18}"
    lines = [head, "-" * len(head)]
    for rep in reports:
        s = rep.summary()
        cells = [f"{s[n][0]:.2f} +/- {s[n][1]:.2f}"
                 for n in ("train_val_rmse", "train_val_mape", "test_rmse", "test_mape")]
        lines.append(f"{MODEL_LABELS.get(rep.kind, rep.kind):<6} {cells[0]:>18} {cells[1]:>20} "
                     f"{cells[2]:>18} {cells[3]:>18}")
    return "\n".join(lines) + "\n"


def write_cv_report(reports, out_dir):
    """``summary.txt``, plus per model ``parity_<kind>.csv``,
    ``contour_<kind>.csv`` (inner RMSE per fold and grid point, blank when
    skipped) and ``folds_<kind>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(format_summary(reports))
    for rep in reports:
        with open(out / f"parity_{rep.kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "cell_id", "true_life", "predicted_life"])
            for f in rep.folds:
                for cid, t, p in f.parity:
                    w.writerow([f.fold, cid, repr(t), repr(p)])
        with open(out / f"contour_{rep.kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "n_start", "n_end", "inner_rmse"])
            for f in rep.folds:
                for p in rep.grid:
                    v = f.inner_mse.get(p)
                    w.writerow([f.fold, p[0], p[1], "" if v is None else repr(math.sqrt(v))])
        with open(out / f"folds_{rep.kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "n_start", "n_end", "train_val_rmse", "train_val_mape",
                        "test_rmse", "test_mape", "n_test", "n_skipped_points"])
            for f in rep.folds:
                w.writerow([f.fold, *f.chosen, repr(f.train_val_rmse), repr(f.train_val_mape),
                            repr(f.test_rmse), repr(f.test_mape), len(f.parity), len(f.skipped)])

