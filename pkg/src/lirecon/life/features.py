"""Early-cycle features from discharge curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .data import CycleCurve, CyclingDataset, DataError

EOL_THRESHOLD = 1.1  # Ah, end of first life
DEBOUNCE = 3


class FeatureError(ValueError):
    pass


def _q_of_v(curve: CycleCurve):
    """Discharge data as increasing-V arrays for interpolation."""
    return curve.discharge_v[::-1], curve.discharge_q[::-1]


def interp_q_of_v(curve: CycleCurve, grid):
    """Discharge capacity at each grid voltage, piecewise linear in V.

    Where the curve holds several samples at one voltage (a flat stretch),
    the value at that voltage is the one ``np.interp`` picks for the
    reversed arrays.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    v, q = _q_of_v(curve)
    lo, hi = v[0], v[-1]
    bad = grid[(grid < lo) | (grid > hi)]
    if bad.size:
        raise FeatureError(f"grid voltage {bad[0]!r} V outside curve span [{lo}, {hi}] V")
    return np.interp(grid, v, q)


@dataclass(frozen=True)
class DeltaQ:
    var: float
    log10_var: float
    zero_variance: bool
    grid: np.ndarray
    delta_q: np.ndarray


def delta_q_feature(curve_a: CycleCurve, curve_b: CycleCurve, grid_size: int = 1000) -> DeltaQ:
    """Population variance of ``Q_b(V) - Q_a(V)`` on a uniform grid over the
    shared voltage span. Zero variance gives ``log10_var = -inf`` and sets
    ``zero_variance``."""
    if grid_size < 2:
        raise FeatureError("grid_size must be >= 2")
    lo = max(curve_a.discharge_v.min(), curve_b.discharge_v.min())
    hi = min(curve_a.discharge_v.max(), curve_b.discharge_v.max())
    if not lo < hi:
        raise FeatureError(f"voltage spans do not overlap ([{lo}, {hi}])")
    grid = np.linspace(lo, hi, grid_size)
    dq = interp_q_of_v(curve_b, grid) - interp_q_of_v(curve_a, grid)
    var = float(np.var(dq))
    if var == 0.0:
        return DeltaQ(0.0, -math.inf, True, grid, dq)
    return DeltaQ(var, math.log10(var), False, grid, dq)


def dqdv(curve: CycleCurve, window: int = 9):
    """Differential capacity ``dQ/dV`` along the discharge curve.

    Repeated voltages are merged (mean Q), both V and Q are smoothed by a
    centred moving average of ``window`` samples, and the derivative is the
    three-point (quadratic-exact) central difference on the smoothed,
    possibly non-uniform, grid. Returns ``(V, dQ/dV)`` at interior points.
    """
    window = int(window)
    if window < 1:
        raise FeatureError("window must be >= 1")
    v = curve.discharge_v
    q = curve.discharge_q
    uv, inv = np.unique(v, return_inverse=True)
    if uv.size != v.size:
        uq = np.bincount(inv, weights=q) / np.bincount(inv)
        v, q = uv[::-1], uq[::-1]
    if np.any(np.diff(v) >= 0):
        raise FeatureError("discharge voltage is not monotone after merging repeats")
    if v.size < window + 2:
        raise FeatureError(f"need at least {window + 2} distinct samples, got {v.size}")
    if window > 1:
        kernel = np.ones(window) / window
        v = np.convolve(v, kernel, mode="valid")
        q = np.convolve(q, kernel, mode="valid")
    h0 = v[1:-1] - v[:-2]
    h1 = v[2:] - v[1:-1]
    d = (-h1 / (h0 * (h0 + h1)) * q[:-2]
         + (h1 - h0) / (h0 * h1) * q[1:-1]
         + h0 / (h1 * (h0 + h1)) * q[2:])
    return v[1:-1], d


@dataclass(frozen=True)
class LifeLabel:
    cycle: Optional[int]
    censored: bool
    last_cycle: int


def cycle_life_label(capacities, threshold: float = EOL_THRESHOLD,
                     debounce: int = DEBOUNCE) -> LifeLabel:
    """First cycle at which capacity is <= ``threshold`` and stays there for
    the next ``debounce`` recorded cycles.

    A crossing within the last ``debounce`` records counts if every later
    record is also below threshold (tests usually stop right after end of
    life). Accepts a ``{cycle: Ah}`` mapping or ``(cycles, Ah)`` arrays.
    """
    if isinstance(capacities, Mapping):
        cycles = np.array(sorted(capacities), dtype=int)
        q = np.array([capacities[c] for c in cycles], dtype=float)
    else:
        cycles, q = (np.asarray(a) for a in capacities)
        order = np.argsort(cycles, kind="stable")
        cycles, q = cycles[order].astype(int), q[order].astype(float)
    if cycles.size == 0:
        raise FeatureError("empty capacity series")
    below = q <= threshold
    n = below.size
    for i in np.nonzero(below)[0]:
        if below[i:min(n, i + debounce + 1)].all():
            return LifeLabel(int(cycles[i]), False, int(cycles[-1]))
    return LifeLabel(None, True, int(cycles[-1]))


FEATURE_NAMES = ("log10_var_dq", "current_A", "q_start_Ah", "q_end_Ah")


@dataclass(frozen=True)
class FeatureRow:
    cell_id: str
    log10_var: float
    current: float
    q_start: float
    q_end: float
    label: float

    def features(self):
        return np.array([self.log10_var, self.current, self.q_start, self.q_end])


def build_feature_table(ds: CyclingDataset, n_start: int, n_end: int,
                        threshold: float = EOL_THRESHOLD, grid_size: int = 1000,
                        labels: Optional[dict] = None):
    """Feature rows for every eligible cell.

    Returns ``(rows, excluded)`` where ``excluded`` lists ``(cell_id, reason)``
    for cells without curves at both cycles, with a censored label, or with
    a zero ``var(dQ)``. ``labels`` may pass precomputed ``{cell_id: LifeLabel}``.
    """
    if n_start == n_end:
        raise FeatureError("n_start and n_end must differ")
    rows, excluded = [], []
    for cell in ds.cells:
        lab = labels[cell.cell_id] if labels is not None else cycle_life_label(
            cell.discharge_capacities(), threshold)
        if lab.censored:
            excluded.append((cell.cell_id, "censored"))
            continue
        missing = [n for n in (n_start, n_end) if not cell.has_curve(n)]
        if missing:
            excluded.append((cell.cell_id, f"no discharge curve at cycle(s) {missing}"))
            continue
        try:
            a, b = cell.curve(n_start), cell.curve(n_end)
            dq = delta_q_feature(a, b, grid_size)
        except (FeatureError, DataError) as exc:
            excluded.append((cell.cell_id, str(exc)))
            continue
        if dq.zero_variance:
            excluded.append((cell.cell_id, "zero var(dQ)"))
            continue
        rows.append(FeatureRow(cell.cell_id, dq.log10_var, float(cell.current_a),
                               float(a.discharge_capacity), float(b.discharge_capacity),
                               float(lab.cycle)))
    return rows, excluded


def feature_matrix(rows):
    X = np.array([r.features() for r in rows]) if rows else np.empty((0, 4))
    y = np.array([r.label for r in rows])
    return X, y
