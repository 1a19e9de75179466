"""Capacity-recovery metrics, recovery-rate regression and exact Shapley
attribution."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .linear import LinearFit, ols
from .ocp import packaged_table

RECOVERY_COLUMNS = ("cell_id", "current_A", "cycles", "c_init_Ah", "c_res_Ah", "c_aft_Ah", "c_rec_Ah")
REPORTED_COLUMNS = ("r1_reported_pct", "r2_reported_pct")
FEATURES = ("SoH", "C_res", "C_init", "Cycle #", "Current")
TARGETS = ("c_rec", "r1", "r2")
MAX_SHAPLEY_FEATURES = 15
R1_TOL, R2_TOL = 2.0, 0.3       # percentage points
R1_SCOPE_C_RES = 0.8            # Ah, r1 is checked only above this residual capacity


class RecoveryError(ValueError):
    pass


@dataclass(frozen=True)
class RecoveryRecord:
    """One cell's capacities (Ah). Derived quantities are always recomputed;
    ``r1_reported`` / ``r2_reported`` keep any values printed upstream."""

    cell_id: str
    current: float
    cycles: int
    c_init: float
    c_res: float
    c_aft: float
    c_rec: float
    r1_reported: Optional[float] = None
    r2_reported: Optional[float] = None

    def __post_init__(self):
        for name in ("current", "c_init", "c_res", "c_aft", "c_rec"):
            if not math.isfinite(getattr(self, name)):
                raise RecoveryError(f"{self.cell_id}: {name} is not finite")
        if not 0 < self.c_res <= self.c_init:
            raise RecoveryError(f"{self.cell_id}: need 0 < c_res <= c_init "
                                f"(got {self.c_res}, {self.c_init})")
        if self.c_rec < 0:
            raise RecoveryError(f"{self.cell_id}: c_rec must be non-negative")

    @property
    def soh(self):
        return self.c_res / self.c_init

    @property
    def c_l(self):
        return self.c_init - self.c_res

    @property
    def r1(self):
        return self.c_rec / self.c_res * 100.0

    @property
    def r2(self):
        """``None`` when no capacity was lost (``c_l == 0``)."""
        return None if self.c_l <= 0 else self.c_rec / self.c_l * 100.0

    @property
    def r2_undefined(self):
        return self.c_l <= 0

    def features(self):
        return np.array([self.soh, self.c_res, self.c_init, float(self.cycles), self.current])

    def target(self, name):
        if name not in TARGETS:
            raise RecoveryError(f"unknown target {name!r}; expected one of {TARGETS}")
        return getattr(self, name)


def recovery_metrics(c_init, c_res, c_aft, c_rec, cycles, current, cell_id="") -> RecoveryRecord:
    return RecoveryRecord(str(cell_id), float(current), int(cycles), float(c_init), float(c_res),
                          float(c_aft), float(c_rec))


# --- CSV ---------------------------------------------------------------------

def _float(v, what, where):
    try:
        out = float(v)
    except ValueError:
        raise RecoveryError(f"{where}: {what} is not a number: {v!r}") from None
    return out


def parse_recovery_csv(path):
    """Records from a recovery CSV; the two ``*_reported_pct`` columns are optional."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise RecoveryError(f"{path}: empty file") from None
        if tuple(header[:len(RECOVERY_COLUMNS)]) != RECOVERY_COLUMNS or \
                tuple(header[len(RECOVERY_COLUMNS):]) not in ((), REPORTED_COLUMNS):
            raise RecoveryError(f"{path}: header must be {list(RECOVERY_COLUMNS)} "
                                f"optionally followed by {list(REPORTED_COLUMNS)}")
        records = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not x.strip() for x in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(header):
                raise RecoveryError(f"{where}: expected {len(header)} fields, got {len(row)}")
            vals = [_float(v, h, where) for h, v in zip(header[1:], row[1:])]
            try:
                cycles = int(row[2])
            except ValueError:
                raise RecoveryError(f"{where}: cycles is not an integer: {row[2]!r}") from None
            rep = vals[6:] + [None, None]
            try:
                records.append(RecoveryRecord(row[0].strip(), vals[0], cycles, *vals[2:6],
                                              rep[0], rep[1]))
            except RecoveryError as exc:
                raise RecoveryError(f"{where}: {exc}") from None
    if not records:
        raise RecoveryError(f"{path}: no data rows")
    return records


def write_recovery_csv(records, path):
    with_rep = any(r.r1_reported is not None for r in records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECOVERY_COLUMNS + (REPORTED_COLUMNS if with_rep else ()))
        for r in records:
            row = [r.cell_id, repr(r.current), r.cycles, repr(r.c_init), repr(r.c_res),
                   repr(r.c_aft), repr(r.c_rec)]
            if with_rep:
                row += [repr(r.r1_reported), repr(r.r2_reported)]
            w.writerow(row)


def shipped_recovery_records():
    """The 29 reconditioned cells with their printed recovery rates."""
    return parse_recovery_csv(packaged_table("recovery_cells.csv"))


# --- discrepancy report ------------------------------------------------------

@dataclass(frozen=True)
class Discrepancy:
    cell_id: str
    metric: str
    computed: float
    reported: float
    in_scope: bool      # inside the range where agreement is expected

    @property
    def delta(self):
        return self.computed - self.reported


def discrepancies(records):
    """Rows whose recomputed r1 / r2 differ from the printed value by more
    than 2 / 0.3 percentage points. r1 agreement is expected only for
    ``c_res >= 0.8`` Ah; deviations below that are listed as out of scope."""
    out = []
    for r in records:
        if r.r2_reported is not None:
            if r.r2 is None or abs(r.r2 - r.r2_reported) > R2_TOL:
                out.append(Discrepancy(r.cell_id, "r2", math.nan if r.r2 is None else r.r2,
                                       r.r2_reported, True))
        if r.r1_reported is not None and abs(r.r1 - r.r1_reported) > R1_TOL:
            out.append(Discrepancy(r.cell_id, "r1", r.r1, r.r1_reported,
                                   r.c_res >= R1_SCOPE_C_RES))
    return out


def write_metrics_report(records, out_dir):
    """``metrics.csv`` (inputs, derived columns, printed values, deltas) and
    ``discrepancies.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(RECOVERY_COLUMNS) + ["soh", "c_l_Ah", "r1_pct", "r2_pct", "r2_undefined",
                                             "r1_reported_pct", "r2_reported_pct",
                                             "r1_delta_pp", "r2_delta_pp"])
        for r in records:
            def fmt(v):
                return "" if v is None else f"{v:.6g}"
            d1 = None if r.r1_reported is None else r.r1 - r.r1_reported
            d2 = None if (r.r2_reported is None or r.r2 is None) else r.r2 - r.r2_reported
            w.writerow([r.cell_id, fmt(r.current), r.cycles, fmt(r.c_init), fmt(r.c_res),
                        fmt(r.c_aft), fmt(r.c_rec), fmt(r.soh), fmt(r.c_l), fmt(r.r1), fmt(r.r2),
                        int(r.r2_undefined), fmt(r.r1_reported), fmt(r.r2_reported),
                        fmt(d1), fmt(d2)])
    found = discrepancies(records)
    lines = [f"r1 tolerance {R1_TOL} pp (checked for c_res >= {R1_SCOPE_C_RES} Ah), "
             f"r2 tolerance {R2_TOL} pp", f"{len(found)} discrepancies"]
    for d in found:
        scope = "in scope" if d.in_scope else "out of scope"
        lines.append(f"{d.cell_id}: {d.metric} computed {d.computed:.2f} reported "
                     f"{d.reported:.2f} (delta {d.delta:+.2f} pp, {scope})")
    (out / "discrepancies.txt").write_text("\n".join(lines) + "\n")
    return found


# --- regression --------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryRegression:
    target: str
    fit: LinearFit
    r_squared: float
    parity: list        # [(cell_id, observed, predicted)]
    excluded: list      # cell ids without a defined target

    @property
    def flagged(self):
        return self.fit.ridge_used

    def predict(self, X):
        return self.fit.predict(X)

    def coefficient_table(self):
        """``(name, standardised coef, raw coef)`` rows, intercept first."""
        b0, raw = self.fit.raw_coefficients()
        rows = [("intercept", self.fit.intercept, b0)]
        rows += [(n, float(c), float(r)) for n, c, r in zip(FEATURES, self.fit.coef, raw)]
        return rows


def design(records, target):
    keep = [r for r in records if r.target(target) is not None]
    X = np.array([r.features() for r in keep]).reshape(-1, len(FEATURES))
    y = np.array([r.target(target) for r in keep], dtype=float)
    return keep, X, y


def fit_recovery_regression(records, target: str = "r1") -> RecoveryRegression:
    if target not in TARGETS:
        raise RecoveryError(f"unknown target {target!r}; expected one of {TARGETS}")
    keep, X, y = design(records, target)
    if len(keep) < len(FEATURES) + 1:
        raise RecoveryError(f"need at least {len(FEATURES) + 1} records with a defined "
                            f"{target}, got {len(keep)}")
    fit = ols(X, y)
    pred = fit.predict(X)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    excluded = [r.cell_id for r in records if r.target(target) is None]
    parity = [(r.cell_id, float(t), float(p)) for r, t, p in zip(keep, y, pred)]
    return RecoveryRegression(target, fit, r2, parity, excluded)


# --- Shapley -----------------------------------------------------------------

@dataclass(frozen=True)
class ShapleyAttribution:
    phi: np.ndarray         # (n_instances, n_features)
    base: float             # model output at the background reference
    prediction: np.ndarray  # model output at each instance

    def efficiency_gap(self):
        return np.abs(self.phi.sum(1) + self.base - self.prediction)


def _coalition_weights(n):
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                     for s in range(n)])


def shapley_values(predict, instances, background) -> ShapleyAttribution:
    """Exact interventional Shapley values against a single reference, the
    column means of ``background``. ``predict`` maps an (m, n) array to m
    outputs. All 2^n coalitions are enumerated, so n is capped at 15."""
    x = np.atleast_2d(np.asarray(instances, dtype=float))
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    n = x.shape[1]
    if bg.shape[1] != n:
        raise RecoveryError("instances and background have different feature counts")
    if n > MAX_SHAPLEY_FEATURES:
        raise RecoveryError(f"{n} features exceed the exact-enumeration cap of "
                            f"{MAX_SHAPLEY_FEATURES}")
    if n == 0:
        raise RecoveryError("no features")
    ref = bg.mean(axis=0)
    masks = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1   # (2^n, n)
    m = x.shape[0]
    batch = np.where(masks[None, :, :] == 1, x[:, None, :], ref[None, None, :])
    values = np.asarray(predict(batch.reshape(-1, n)), dtype=float).reshape(m, 2 ** n)
    weights = _coalition_weights(n)
    sizes = masks.sum(1)
    phi = np.zeros((m, n))
    for i in range(n):
        bit = 1 << i
        without = np.nonzero(masks[:, i] == 0)[0]
        w = weights[sizes[without]]
        phi[:, i] = (values[:, without + bit] - values[:, without]) @ w
    return ShapleyAttribution(phi, float(values[0, 0]), values[:, -1])


def linear_shapley(coef, instances, background):
    """Closed form for a linear model: ``coef_i (x_i - mean_i)``."""
    x = np.atleast_2d(np.asarray(instances, dtype=float))
    return (x - np.asarray(background, dtype=float).mean(axis=0)) * np.asarray(coef, dtype=float)


@dataclass(frozen=True)
class Importance:
    ranking: list                   # [(feature, mean |phi|)] sorted descending
    attribution: ShapleyAttribution
    regression: RecoveryRegression


def importance_ranking(records, target: str = "r1") -> Importance:
    """Fit the linear recovery model and rank features by mean |phi| over
    all records (background: the record means). Ties keep feature order."""
    reg = fit_recovery_regression(records, target)
    _, X, _ = design(records, target)
    att = shapley_values(reg.predict, X, X)
    mean_abs = np.abs(att.phi).mean(axis=0)
    order = sorted(range(len(FEATURES)), key=lambda i: (-mean_abs[i], i))
    return Importance([(FEATURES[i], float(mean_abs[i])) for i in order], att, reg)


def write_regression_report(reg: RecoveryRegression, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "coefficients.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "standardised_coef", "raw_coef"])
        for name, c, r in reg.coefficient_table():
            w.writerow([name, repr(float(c)), repr(float(r))])
        w.writerow(["r_squared", repr(reg.r_squared), ""])
        w.writerow(["ridge_fallback", int(reg.flagged), ""])
    with open(out / f"parity_{reg.target}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "observed", "predicted"])
        for cid, t, p in reg.parity:
            w.writerow([cid, repr(t), repr(p)])


def write_shap_report(imp: Importance, records, target, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "shap_bar.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_abs_phi"])
        for name, v in imp.ranking:
            w.writerow([name, repr(v)])
    keep, _, _ = design(records, target)
    with open(out / "shap_values.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", *FEATURES, "base", "prediction"])
        for r, phi, pred in zip(keep, imp.attribution.phi, imp.attribution.prediction):
            w.writerow([r.cell_id, *(repr(float(v)) for v in phi), repr(imp.attribution.base),
                        repr(float(pred))])
