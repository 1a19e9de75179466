"""Synthetic cycling fleet from the symmetric ECM.

Each cell is the single-cell reduction of the two-sub-cell circuit (equal
branches, no inhomogeneity) under constant current, so terminal voltage is
``U+(z+) - U-(z-) -/+ I R``. Aging removes cyclable lithium at a per-cycle
rate ``r I^2`` (``r`` lognormal across cells) and grows the series
resistance in proportion. The usable window therefore shrinks from the
graphite-empty end, which both fades capacity and reshapes the discharge
curve.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .life.data import V_WINDOW, CellData, CyclingDataset
from .ocp import default_graphite, default_lfp


class FleetError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticFleetSpec:
    n_cells: int = 62
    currents: tuple = (1.0, 1.5, 2.0, 3.0)
    q0_mean: float = 1.50          # fresh discharge capacity, Ah
    q0_std: float = 0.01
    fade_rate: float = 4.4e-4      # lithium lost per cycle at 1 A, Ah
    fade_sigma: float = 0.3        # lognormal spread of the per-cell rate
    r_series: float = 0.05         # ohm, fresh
    r_growth: float = 1.0          # relative resistance gain per Ah of lithium lost
    q_neg: float = 1.75            # Ah
    r_np: float = 1.064
    z_pos_top: float = 0.02        # positive stoichiometry at top of charge
    q_noise: float = 0.002         # relative per-cycle capacity noise
    v_noise: float = 0.0005        # V
    threshold: float = 1.1         # Ah, generation stops a few cycles past it
    curve_cycles: int = 80         # cycles with full curves
    curve_points: int = 60
    min_cycles: int = 85
    max_cycles: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.n_cells < 2:
            raise FleetError("n_cells must be >= 2")
        if not self.currents or any(not c > 0 for c in self.currents):
            raise FleetError("currents must be positive")
        object.__setattr__(self, "currents", tuple(float(c) for c in self.currents))
        for name in ("q0_mean", "fade_rate", "r_series", "q_neg", "r_np"):
            if not getattr(self, name) > 0:
                raise FleetError(f"{name} must be positive")
        for name in ("q0_std", "fade_sigma", "r_growth", "q_noise", "v_noise"):
            if getattr(self, name) < 0:
                raise FleetError(f"{name} must be non-negative")
        if not 0 < self.z_pos_top < 1:
            raise FleetError("z_pos_top must lie in (0, 1)")
        if self.curve_points < 4 or self.curve_cycles < 1:
            raise FleetError("need curve_points >= 4 and curve_cycles >= 1")


def read_fleet_spec(path) -> SyntheticFleetSpec:
    """INI file with a ``[fleet]`` section of SyntheticFleetSpec fields."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FleetError(f"cannot read fleet spec {path}")
    if "fleet" not in cp:
        raise FleetError(f"{path}: missing [fleet] section")
    types = {f.name: f.default for f in fields(SyntheticFleetSpec)}
    kw = {}
    for key, raw in cp.items("fleet"):
        if key not in types:
            raise FleetError(f"{path}: unknown key {key!r}")
        try:
            if key == "currents":
                kw[key] = tuple(float(v) for v in raw.replace(",", " ").split())
            elif isinstance(types[key], int):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        except ValueError:
            raise FleetError(f"{path}: {key} = {raw!r} is not a number") from None
    return SyntheticFleetSpec(**kw)


def write_fleet_spec(spec: SyntheticFleetSpec, path):
    cp = configparser.ConfigParser()
    cp["fleet"] = {f.name: (" ".join(repr(c) for c in spec.currents) if f.name == "currents"
                            else repr(getattr(spec, f.name))) for f in fields(spec)}
    with open(path, "w") as fh:
        cp.write(fh)


_UNIT = np.linspace(0.0, 1.0, 1201)


class _Cell:
    """Discharge/charge curves of one aging cell."""

    def __init__(self, spec, current, q0, rate, ocp_neg, ocp_pos):
        self.spec, self.current, self.rate = spec, current, rate
        self.ocp_neg, self.ocp_pos = ocp_neg, ocp_pos
        self.qn = spec.q_neg
        self.qp = spec.q_neg / spec.r_np
        # cyclable lithium (Ah) that gives a fresh open-circuit capacity of about q0
        self.lith0 = q0 + spec.z_pos_top * self.qp

    def state(self, n):
        lost = self.rate * n
        return self.lith0 - lost, self.spec.r_series * (1.0 + self.spec.r_growth * lost)

    def _ocv(self, lith, q):
        zp = self.spec.z_pos_top + q / self.qp
        zn = (lith - self.spec.z_pos_top * self.qp - q) / self.qn
        return self.ocp_pos(zp) - self.ocp_neg(zn)

    def capacity(self, n):
        lith, r = self.state(n)
        qmax = min(lith - self.spec.z_pos_top * self.qp, (1 - self.spec.z_pos_top) * self.qp)
        q = _UNIT * qmax
        v = self._ocv(lith, q) - self.current * r
        lo = V_WINDOW[0]
        below = np.nonzero(v <= lo)[0]
        if below.size == 0:
            return qmax
        i = below[0]
        if i == 0:
            return 0.0
        return float(q[i - 1] + (q[i] - q[i - 1]) * (v[i - 1] - lo) / (v[i - 1] - v[i]))

    def curves(self, n, cap, points=None):
        lith, r = self.state(n)
        q = np.linspace(0.0, cap, points or self.spec.curve_points)
        ocv = self._ocv(lith, q)
        lo, hi = V_WINDOW
        vd = np.clip(ocv - self.current * r, lo, hi)
        vc = np.clip(ocv[::-1] + self.current * r, lo, hi)
        return q, vd, vc


def gen_synthetic_fleet(spec: Optional[SyntheticFleetSpec] = None,
                        ocp_neg=None, ocp_pos=None) -> CyclingDataset:
    """Cells cycle at ``currents`` in round-robin order until three cycles
    past the capacity threshold (at least ``min_cycles``). Cycles up to
    ``curve_cycles`` carry full charge and discharge curves; later cycles
    only the discharge end points."""
    spec = spec or SyntheticFleetSpec()
    ocp_neg = ocp_neg or default_graphite()
    ocp_pos = ocp_pos or default_lfp()
    rng = np.random.default_rng(spec.seed)
    cells = []
    width = len(str(spec.n_cells))
    for c in range(spec.n_cells):
        current = spec.currents[c % len(spec.currents)]
        q0 = spec.q0_mean + spec.q0_std * rng.standard_normal()
        rate = spec.fade_rate * current ** 2 * np.exp(spec.fade_sigma * rng.standard_normal())
        cell = _Cell(spec, current, q0, rate, ocp_neg, ocp_pos)
        cells.append(_cell_records(f"syn{c:0{width}d}", cell, spec, rng))
    return CyclingDataset(tuple(cells))


def _cell_records(cell_id, cell, spec, rng):
    cyc, step, t, cur, volt, cap = [], [], [], [], [], []
    clock = 0.0
    below = 0
    n = 0
    while n < spec.max_cycles:
        n += 1
        q_true = cell.capacity(n)
        noise = 1.0 + spec.q_noise * rng.standard_normal()
        qd = q_true * noise
        below = below + 1 if qd <= spec.threshold else 0
        hours = q_true / cell.current
        if n <= spec.curve_cycles:
            q, vd, vc = cell.curves(n, q_true)
            vd = np.clip(vd + spec.v_noise * rng.standard_normal(vd.size), *V_WINDOW)
            ts = np.linspace(0.0, hours * 3600.0, q.size)
            for kind, vv, sign in (("charge", vc, 1.0), ("discharge", vd, -1.0)):
                cyc.extend([n] * q.size)
                step.extend([kind] * q.size)
                t.extend(clock + ts)
                cur.extend([sign * cell.current] * q.size)
                volt.extend(vv)
                cap.extend(q * noise)
                clock += hours * 3600.0 + 600.0
        else:
            _, vd, _ = cell.curves(n, q_true, 2)
            cyc.extend([n, n])
            step.extend(["discharge", "discharge"])
            t.extend([clock, clock + hours * 3600.0])
            cur.extend([-cell.current] * 2)
            volt.extend([vd[0], vd[-1]])
            cap.extend([0.0, qd])
            clock += 2 * hours * 3600.0 + 1200.0
        if below > 3 and n >= spec.min_cycles:
            break
    return CellData(cell_id, np.array(cyc), np.array(step, dtype=object), np.array(t),
                    np.array(cur), np.array(volt), np.array(cap), nominal_current=cell.current)
