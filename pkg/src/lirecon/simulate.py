"""Time integration of the two-sub-cell ECM through a protocol."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .ecm import EcmParameters, EcmState
from .protocol import CC_CHARGE, CC_DISCHARGE, CV_HOLD, Protocol, ProtocolStep

TRACE_COLUMNS = (
    "t_s", "v_terminal_V", "i_terminal_A",
    "z1_neg", "z1_pos", "z2_neg", "z2_pos",
    "i_e_A", "n1_Ah", "n2_Ah", "step_label", "cycle_index",
)

_METHODS = {"explicit": 0, "stiff": 1}


class SimulationError(RuntimeError):
    """Integration failure; ``partial`` holds the trace up to the failure."""

    def __init__(self, message, partial=None, where=None):
        super().__init__(message)
        self.partial = partial
        self.where = where


class ClipWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class IntegrationSettings:
    """``method`` is ``"explicit"`` (Dormand-Prince 5(4)) or ``"stiff"``
    (linearly implicit extrapolation, order 3; cheaper at loose tolerances).
    Cadences are output sample spacings in seconds; ``max_dv`` (V) inserts
    extra rows where the voltage moves faster than the cadence resolves
    (0 disables)."""

    method: str = "explicit"
    rtol: float = 1e-8
    atol: float = 1e-10
    hmax: float = 3600.0
    cadence_cycle: float = 10.0
    cadence_hold: float = 60.0
    max_dv: float = 0.02

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {sorted(_METHODS)}")
        if not (self.rtol > 0 and self.atol > 0 and self.hmax > 0):
            raise ValueError("tolerances and hmax must be positive")
        if not (self.cadence_cycle > 0 and self.cadence_hold > 0):
            raise ValueError("cadences must be positive")
        if not self.max_dv >= 0:
            raise ValueError("max_dv must be non-negative")

    def tightened(self, factor=0.5):
        return IntegrationSettings(
            self.method, self.rtol * factor, self.atol * factor, self.hmax,
            self.cadence_cycle, self.cadence_hold, self.max_dv,
        )


@dataclass(eq=False)
class SimulationTrace:
    t: np.ndarray
    v_terminal: np.ndarray
    i_terminal: np.ndarray
    z: np.ndarray  # (n, 4): z1-, z1+, z2-, z2+
    i_e: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    step_label: np.ndarray
    cycle_index: np.ndarray
    clip_events: int = 0

    def __len__(self):
        return self.t.shape[0]

    @property
    def total_lithium(self):
        return self.n1 + self.n2

    def final_state(self) -> EcmState:
        return EcmState(tuple(np.clip(self.z[-1], 0.0, 1.0)), float(self.t[-1]))

    def select(self, mask) -> "SimulationTrace":
        if not isinstance(mask, slice):
            mask = np.asarray(mask)
        return SimulationTrace(
            self.t[mask], self.v_terminal[mask], self.i_terminal[mask], self.z[mask],
            self.i_e[mask], self.n1[mask], self.n2[mask], self.step_label[mask],
            self.cycle_index[mask], self.clip_events,
        )

    @classmethod
    def concatenate(cls, parts) -> "SimulationTrace":
        """Join consecutive segments; a segment's first row is dropped when it
        repeats the previous segment's final time."""
        kept = []
        last_t = -math.inf
        for part in parts:
            if len(part) == 0:
                continue
            if part.t[0] <= last_t:
                part = part.select(slice(1, None))
                if len(part) == 0:
                    continue
            kept.append(part)
            last_t = part.t[-1]
        if not kept:
            return empty_trace()
        return cls(
            np.concatenate([p.t for p in kept]),
            np.concatenate([p.v_terminal for p in kept]),
            np.concatenate([p.i_terminal for p in kept]),
            np.concatenate([p.z for p in kept]),
            np.concatenate([p.i_e for p in kept]),
            np.concatenate([p.n1 for p in kept]),
            np.concatenate([p.n2 for p in kept]),
            np.concatenate([p.step_label for p in kept]),
            np.concatenate([p.cycle_index for p in kept]),
            sum(p.clip_events for p in kept),
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in range(len(self)):
                w.writerow(
                    [repr(float(self.t[r])), repr(float(self.v_terminal[r])),
                     repr(float(self.i_terminal[r]))]
                    + [repr(float(v)) for v in self.z[r]]
                    + [repr(float(self.i_e[r])), repr(float(self.n1[r])), repr(float(self.n2[r])),
                       self.step_label[r], int(self.cycle_index[r])]
                )

    @classmethod
    def from_csv(cls, path) -> "SimulationTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace header {header}")
            rows = list(reader)
        if not rows:
            return empty_trace()
        num = np.array([[float(x) for x in r[:10]] for r in rows])
        return cls(
            num[:, 0], num[:, 1], num[:, 2], num[:, 3:7].copy(), num[:, 7], num[:, 8], num[:, 9],
            np.array([r[10] for r in rows], dtype=object),
            np.array([int(r[11]) for r in rows]),
        )


def empty_trace():
    e = np.empty(0)
    return SimulationTrace(e, e, e, np.empty((0, 4)), e, e, e,
                           np.empty(0, dtype=object), np.empty(0, dtype=int))


def _tables(params: EcmParameters):
    neg, pos = params.ocp_neg, params.ocp_pos
    return (np.asarray(neg.z), np.asarray(neg.potential),
            np.asarray(pos.z), np.asarray(pos.potential))


def _cc_time_cap(params: EcmParameters, current):
    # generous bound: long enough to sweep every electrode end to end twice
    q_total = 2.0 * (params.q_neg_sub + params.q_pos_sub)
    return 2.0 * 3600.0 * q_total / current


def run_step(
    params: EcmParameters,
    state: EcmState,
    step: ProtocolStep,
    settings: Optional[IntegrationSettings] = None,
    cycle_index: int = 0,
):
    """Integrate one protocol step from ``state``.

    CC steps end when the terminal voltage crosses ``step.voltage``
    (located to 1 ms by bisection); holds and rests end at their duration.
    Returns ``(new_state, segment)``; the segment covers ``[t_start, t_end]``.
    """
    settings = settings or IntegrationSettings()
    zn, un, zp, up = _tables(params)
    p = params.kernel_vector()
    t0 = float(state.t)
    if step.kind in (CC_CHARGE, CC_DISCHARGE):
        mode = _kernels.MODE_CURRENT
        value = step.signed_current
        cutoff = float(step.voltage)
        direction = 1 if step.kind == CC_CHARGE else -1
        span = step.duration if step.duration is not None else _cc_time_cap(params, step.current)
        cadence = settings.cadence_cycle
    elif step.kind == CV_HOLD:
        mode, value, cutoff, direction = _kernels.MODE_VOLTAGE, float(step.voltage), 0.0, 0
        span = step.duration
        cadence = settings.cadence_hold
    else:
        mode, value, cutoff, direction = _kernels.MODE_CURRENT, 0.0, 0.0, 0
        span = step.duration
        cadence = settings.cadence_cycle
    n_rows = int(math.ceil(span / cadence)) + 16
    if settings.max_dv > 0:
        n_rows += int(8.0 / settings.max_dv)
    while True:
        rows = np.empty((n_rows, 8))
        status, t_end, y_end, nrows, _nsteps, nclips = _kernels.integrate(
            state.as_array(), t0, p, zn, un, zp, up, mode, float(value), cutoff, direction,
            t0 + span, cadence, settings.rtol, settings.atol, settings.hmax, rows,
            _METHODS[settings.method], settings.max_dv,
        )
        if status != _kernels.STATUS_ROWS_FULL:
            break
        n_rows *= 2
    segment = _segment(params, rows[:nrows], step.label, cycle_index, nclips)
    if nclips:
        warnings.warn(
            f"{step.label}: stoichiometry clipped to [0, 1] on {nclips} step(s)", ClipWarning
        )
    if status == _kernels.STATUS_CAP:
        raise SimulationError(
            f"{step.label}: cutoff {step.voltage} V not reached within {span:.0f} s "
            "(electrodes saturated?)", segment,
        )
    if status not in (_kernels.STATUS_DURATION, _kernels.STATUS_EVENT):
        raise SimulationError(f"{step.label}: integration failed (status {status})", segment)
    return EcmState(tuple(np.clip(y_end, 0.0, 1.0)), float(t_end)), segment


def _segment(params, rows, label, cycle_index, nclips):
    z = rows[:, 3:7].copy()
    n1 = z[:, 0] * params.q_neg_sub + z[:, 1] * params.q_pos_sub
    n2 = z[:, 2] * params.q_neg_sub + z[:, 3] * params.q_pos_sub
    n = rows.shape[0]
    return SimulationTrace(
        rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2].copy(), z, rows[:, 7].copy(), n1, n2,
        np.full(n, label, dtype=object), np.full(n, cycle_index, dtype=int), nclips,
    )


def run_protocol(
    params: EcmParameters,
    state: EcmState,
    protocol: Protocol,
    settings: Optional[IntegrationSettings] = None,
    max_repetitions: Optional[int] = None,
) -> SimulationTrace:
    """Chain ``run_step`` over every block and repetition.

    Repetitions are numbered consecutively across blocks starting at 1. With
    ``max_repetitions`` set, a longer block only simulates its final
    ``max_repetitions`` repetitions (keeping their original numbers), which
    is how the 919-cycle aging block is abbreviated to cycles 917-919.
    """
    parts = []
    first_cycle = 1
    for b, block in enumerate(protocol.blocks):
        reps = block.repetitions
        skip = 0
        if max_repetitions is not None and reps > max_repetitions:
            skip = reps - max_repetitions
        for rep in range(skip, reps):
            cycle = first_cycle + rep
            for s, step in enumerate(block.steps):
                try:
                    state, seg = run_step(params, state, step, settings, cycle)
                except SimulationError as exc:
                    where = (b, rep, s)
                    partial = SimulationTrace.concatenate(parts + [exc.partial])
                    raise SimulationError(
                        f"block {b}, repetition {rep + 1}, step {s} ({step.label}): {exc}",
                        partial, where,
                    ) from exc
                parts.append(seg)
        first_cycle += reps
    return SimulationTrace.concatenate(parts)


@dataclass(frozen=True)
class CycleCapacity:
    cycle: int
    charge_ah: Optional[float]
    discharge_ah: Optional[float]

    @property
    def flagged(self):
        return self.discharge_ah is None


def extract_cycle_capacities(trace: SimulationTrace):
    """Per-cycle charge/discharge throughput from labelled CC segments.

    Rows are right-closed (a row closes the interval since the previous row),
    so ``|i| dt`` over a constant-current step is exact. A row counts toward
    discharge when its label contains ``discharge`` and toward charge when it
    contains ``charge`` otherwise. Cycles without a discharge segment get
    ``discharge_ah=None``.
    """
    out = {}
    if len(trace) == 0:
        return out
    dt = np.diff(trace.t)
    labels = trace.step_label[1:]
    amps = np.abs(trace.i_terminal[1:])
    cycles = trace.cycle_index[1:]
    is_dis = np.array(["discharge" in str(l) for l in labels], dtype=bool)
    is_chg = np.array(["charge" in str(l) for l in labels], dtype=bool) & ~is_dis
    for c in np.unique(trace.cycle_index):
        m = cycles == c
        dis = m & is_dis
        chg = m & is_chg
        q_dis = float(np.sum(amps[dis] * dt[dis]) / 3600.0) if dis.any() else None
        q_chg = float(np.sum(amps[chg] * dt[chg]) / 3600.0) if chg.any() else None
        out[int(c)] = CycleCapacity(int(c), q_chg, q_dis)
    return out
