"""Per-cell cycling records and their CSV format.

CSV columns: ``cell_id,cycle_index,step,t_s,current_A,voltage_V,capacity_Ah``
with ``step`` one of ``charge``, ``discharge``, ``rest``. ``capacity_Ah`` is
the charge passed since the start of the current step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

CSV_COLUMNS = ("cell_id", "cycle_index", "step", "t_s", "current_A", "voltage_V", "capacity_Ah")
STEPS = ("charge", "discharge", "rest")
V_WINDOW = (2.5, 4.0)
V_SLACK = 0.01  # tester overshoot tolerated around the cycling window


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CycleCurve:
    """Discharge samples ordered by decreasing V (Q non-decreasing) and charge
    samples ordered by increasing V. Q is in Ah since the step start."""

    cycle_index: int
    discharge_v: np.ndarray
    discharge_q: np.ndarray
    charge_v: np.ndarray = field(default_factory=lambda: np.empty(0))
    charge_q: np.ndarray = field(default_factory=lambda: np.empty(0))
    discharge_capacity: Optional[float] = None

    def __post_init__(self):
        for name in ("discharge_v", "discharge_q", "charge_v", "charge_q"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        dv, dq = self.discharge_v, self.discharge_q
        if dv.shape != dq.shape or dv.ndim != 1 or dv.size < 2:
            raise DataError(f"cycle {self.cycle_index}: need >= 2 discharge samples")
        if self.charge_v.shape != self.charge_q.shape:
            raise DataError(f"cycle {self.cycle_index}: charge V/Q length mismatch")
        lo, hi = V_WINDOW
        for v in (dv, self.charge_v):
            if v.size and (v.min() < lo - V_SLACK or v.max() > hi + V_SLACK):
                raise DataError(
                    f"cycle {self.cycle_index}: voltage outside [{lo}, {hi}] V window"
                )
        if np.any(np.diff(dv) > 0):
            raise DataError(f"cycle {self.cycle_index}: discharge V must be non-increasing")
        if np.any(np.diff(dq) < 0):
            raise DataError(f"cycle {self.cycle_index}: discharge Q must be non-decreasing")
        if self.discharge_capacity is None:
            object.__setattr__(self, "discharge_capacity", float(dq[-1]))


@dataclass(eq=False)
class CellData:
    """Raw rows of one cell, kept verbatim so exports round-trip."""

    cell_id: str
    cycle_index: np.ndarray
    step: np.ndarray
    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    capacity: np.ndarray
    nominal_current: Optional[float] = None
    _curves: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.cycle_index = np.asarray(self.cycle_index, dtype=int)
        self.step = np.asarray(self.step, dtype=object)
        for name in ("t", "current", "voltage", "capacity"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.nominal_current is None:
            dis = self.step == "discharge"
            amps = np.abs(self.current[dis]) if dis.any() else np.abs(self.current)
            self.nominal_current = float(np.round(np.median(amps), 6)) if amps.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, CellData):
            return NotImplemented
        return (
            self.cell_id == other.cell_id
            and np.array_equal(self.cycle_index, other.cycle_index)
            and list(self.step) == list(other.step)
            and all(np.array_equal(getattr(self, n), getattr(other, n))
                    for n in ("t", "current", "voltage", "capacity"))
        )

    @property
    def current_a(self):
        return self.nominal_current

    def cycles(self):
        return np.unique(self.cycle_index)

    def discharge_capacities(self):
        """``{cycle: Ah}`` from the largest discharge capacity in each cycle."""
        dis = self.step == "discharge"
        out = {}
        for c in np.unique(self.cycle_index[dis]):
            m = dis & (self.cycle_index == c)
            out[int(c)] = float(self.capacity[m].max())
        return out

    def has_curve(self, cycle):
        m = (self.cycle_index == cycle) & (self.step == "discharge")
        return int(m.sum()) >= 2

    def curve(self, cycle) -> CycleCurve:
        """Discharge/charge curve of one cycle. Tester noise can make raw
        discharge V tick up or Q tick down; the running min of V and running
        max of Q (in time order) are used so the curve is monotone."""
        cycle = int(cycle)
        if cycle not in self._curves:
            sel = self.cycle_index == cycle
            dis = sel & (self.step == "discharge")
            chg = sel & (self.step == "charge")
            if dis.sum() < 2:
                raise DataError(f"{self.cell_id}: cycle {cycle} has no discharge curve")
            od = np.argsort(self.t[dis], kind="stable")
            oc = np.argsort(self.t[chg], kind="stable")
            self._curves[cycle] = CycleCurve(
                cycle,
                np.minimum.accumulate(self.voltage[dis][od]),
                np.maximum.accumulate(self.capacity[dis][od]),
                self.voltage[chg][oc], self.capacity[chg][oc],
            )
        return self._curves[cycle]


@dataclass(eq=False)
class CyclingDataset:
    cells: tuple

    def __post_init__(self):
        self.cells = tuple(self.cells)
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate cell ids")

    def __eq__(self, other):
        if not isinstance(other, CyclingDataset):
            return NotImplemented
        return len(self.cells) == len(other.cells) and all(
            a == b for a, b in zip(self.cells, other.cells)
        )

    def __len__(self):
        return len(self.cells)

    def cell(self, cell_id) -> CellData:
        for c in self.cells:
            if c.cell_id == cell_id:
                return c
        raise KeyError(cell_id)

    def subset(self, cell_ids):
        keep = set(cell_ids)
        return CyclingDataset(tuple(c for c in self.cells if c.cell_id in keep))


def _num(value, what, where):
    try:
        v = float(value)
    except ValueError:
        raise DataError(f"{where}: {what} is not a number: {value!r}") from None
    if not np.isfinite(v):
        raise DataError(f"{where}: {what} is not finite")
    return v


def parse_cycling_csv(path) -> CyclingDataset:
    """Parse one cycling CSV (it may hold several cells).

    Rows are grouped by cell in file order. Within a run of rows sharing
    cell, cycle and step, time must strictly increase.
    """
    path = Path(path)
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (missing header)") from None
        header = [h.strip() for h in header]
        if tuple(header) != CSV_COLUMNS:
            bases = [h.rsplit("_", 1)[0] if "_" in h else h for h in header]
            want = [h.rsplit("_", 1)[0] if "_" in h else h for h in CSV_COLUMNS]
            if bases == want:
                raise DataError(f"{path}: unit suffix mismatch in header {header}; "
                                f"expected {list(CSV_COLUMNS)}")
            raise DataError(f"{path}: missing or wrong header; expected {list(CSV_COLUMNS)}")
        prev_key, prev_t = None, None
        for lineno, row in enumerate(reader, 2):
            if not row or all(not x.strip() for x in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"{where}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            cell_id = row[0].strip()
            try:
                cycle = int(row[1])
            except ValueError:
                raise DataError(f"{where}: cycle_index is not an integer: {row[1]!r}") from None
            step = row[2].strip()
            if step not in STEPS:
                raise DataError(f"{where}: unknown step {step!r}")
            t = _num(row[3], "t_s", where)
            key = (cell_id, cycle, step)
            if key == prev_key and not t > prev_t:
                raise DataError(f"{where}: time not increasing within step ({t} after {prev_t})")
            prev_key, prev_t = key, t
            rec = cells.setdefault(cell_id, ([], [], [], [], [], []))
            rec[0].append(cycle)
            rec[1].append(step)
            rec[2].append(t)
            rec[3].append(_num(row[4], "current_A", where))
            rec[4].append(_num(row[5], "voltage_V", where))
            rec[5].append(_num(row[6], "capacity_Ah", where))
    if not cells:
        raise DataError(f"{path}: no data rows")
    return CyclingDataset(tuple(CellData(cid, *cols) for cid, cols in cells.items()))


def parse_cycling_dir(path) -> CyclingDataset:
    """Parse every ``*.csv`` in a directory (sorted by name) into one dataset."""
    files = sorted(Path(path).glob("*.csv"))
    if not files:
        raise DataError(f"{path}: no .csv files")
    cells = []
    for f in files:
        cells.extend(parse_cycling_csv(f).cells)
    return CyclingDataset(tuple(cells))


def write_cycling_csv(cells, path):
    if isinstance(cells, CellData):
        cells = [cells]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in cells:
            for i in range(c.t.shape[0]):
                w.writerow([c.cell_id, int(c.cycle_index[i]), c.step[i], repr(float(c.t[i])),
                            repr(float(c.current[i])), repr(float(c.voltage[i])),
                            repr(float(c.capacity[i]))])


def write_cycling_dir(ds: CyclingDataset, path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for c in ds.cells:
        write_cycling_csv(c, out / f"{c.cell_id}.csv")
