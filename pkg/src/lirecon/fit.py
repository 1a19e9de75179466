"""Fitting the ECM to voltage data and fitting the rest-recovery exponential."""
from __future__ import annotations

import configparser
import csv
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .de import DeError, DeSettings, FitResult, ParameterBounds, differential_evolution
from .ecm import EcmError, EcmParameters, params_from_vector
from .ocp import default_graphite, default_lfp
from .protocol import Protocol
from .simulate import IntegrationSettings, SimulationError, SimulationTrace, run_protocol

ECM_NAMES = ("r2_branch", "k", "ke", "q_max_neg", "r_np", "z1_neg", "z1_pos", "z2_neg", "z2_pos")

# cycles entering the loss for the reconditioning chain: 918, the second
# pre-reconditioning checkup and both post-reconditioning checkups
DEFAULT_FIT_CYCLES = (918, 921, 924, 925)

# the objective only needs voltages at the reference times, so it trades
# integrator tolerance for speed
FIT_INTEGRATION = IntegrationSettings(
    method="stiff", rtol=1e-5, atol=1e-7, cadence_cycle=10.0, cadence_hold=600.0, max_dv=0.005
)


class FitError(ValueError):
    pass


def default_ecm_bounds() -> ParameterBounds:
    return ParameterBounds(
        ECM_NAMES,
        (0.010, 1.0, 500.0, 1.1, 1.0, 1e-8, 0.7, 1e-8, 0.7),
        (0.300, 8.0, 2000.0, 2.2, 2.0, 0.3, 1.0 - 1e-8, 0.3, 1.0 - 1e-8),
    )


@dataclass(frozen=True, eq=False)
class FitObjectiveSpec:
    """Reference voltages to match and the protocol that produced them.

    ``reference`` is a trace (only ``t``, ``v_terminal`` and ``cycle_index``
    are used). Each selected cycle is aligned at its start: the previous
    row's time, i.e. the preceding step boundary.
    """

    protocol: Protocol
    reference: SimulationTrace
    cycles: tuple = DEFAULT_FIT_CYCLES
    max_repetitions: Optional[int] = 3
    integration: IntegrationSettings = FIT_INTEGRATION
    ocp_neg: object = field(default_factory=default_graphite)
    ocp_pos: object = field(default_factory=default_lfp)

    def __post_init__(self):
        cycles = tuple(int(c) for c in self.cycles)
        if not cycles:
            raise FitError("no segments selected for the loss")
        present = set(np.unique(self.reference.cycle_index).tolist())
        missing = [c for c in cycles if c not in present]
        if missing:
            raise FitError(f"reference has no rows for cycle(s) {missing}")
        object.__setattr__(self, "cycles", cycles)

    def segments(self):
        """``[(cycle, t_start, t_rel, v)]`` for the selected cycles."""
        ref = self.reference
        out = []
        for c in self.cycles:
            idx = np.nonzero(ref.cycle_index == c)[0]
            start = ref.t[idx[0] - 1] if idx[0] > 0 else ref.t[0]
            out.append((c, float(start), ref.t[idx] - start, ref.v_terminal[idx]))
        return out


def cycle_starts(trace: SimulationTrace):
    starts = {}
    first = np.nonzero(np.diff(trace.cycle_index, prepend=trace.cycle_index[0] - 1))[0]
    for i in first:
        starts[int(trace.cycle_index[i])] = float(trace.t[i - 1] if i > 0 else trace.t[0])
    return starts


class EcmObjective:
    """Mean squared voltage error of a candidate nine-vector (picklable)."""

    def __init__(self, spec: FitObjectiveSpec):
        self.spec = spec
        self._segments = spec.segments()
        self._n = sum(len(s[2]) for s in self._segments)

    def simulate(self, x) -> SimulationTrace:
        params = params_from_vector(x, self.spec.ocp_neg, self.spec.ocp_pos)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return run_protocol(params, params.initial_state(), self.spec.protocol,
                                self.spec.integration, self.spec.max_repetitions)

    def residuals(self, trace: SimulationTrace):
        starts = cycle_starts(trace)
        out = []
        for c, _, t_rel, v in self._segments:
            if c not in starts:
                raise FitError(f"simulation has no cycle {c}")
            out.append(np.interp(t_rel + starts[c], trace.t, trace.v_terminal) - v)
        return np.concatenate(out)

    def __call__(self, x):
        try:
            trace = self.simulate(x)
        except (SimulationError, EcmError):
            return math.inf
        r = self.residuals(trace)
        return float(np.dot(r, r) / self._n)


def fit_ecm(spec: FitObjectiveSpec, bounds: Optional[ParameterBounds] = None,
            settings: Optional[DeSettings] = None, map_fn=map, init=None,
            callback=None) -> FitResult:
    bounds = bounds or default_ecm_bounds()
    if bounds.names != ECM_NAMES:
        raise FitError(f"ECM bounds must name {ECM_NAMES}")
    return differential_evolution(EcmObjective(spec), bounds, settings, map_fn, init, callback)


def fitted_parameters(result: FitResult, spec: FitObjectiveSpec) -> EcmParameters:
    return params_from_vector(result.x, spec.ocp_neg, spec.ocp_pos)


# --- rest recovery y = a (1 - b exp(-x / tau)) -------------------------------

RELAXATION_BOUNDS = ParameterBounds(("a", "b", "tau"), (1e-9, 0.0, 1e-6), (3.0, 1.0, 1000.0))
RELAXATION_DE = DeSettings(population=30, max_generations=4000, tol=0.0, window=200, seed=0)


@dataclass(frozen=True)
class RelaxationFit:
    a: float
    b: float
    tau: float
    loss: float
    tau_identified: bool = True

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        if not self.tau_identified:
            return np.full_like(x, self.a * (1.0 - self.b))
        return self.a * (1.0 - self.b * np.exp(-x / self.tau))


class _RelaxationLoss:
    def __init__(self, x, y):
        self.x, self.y = x, y

    def __call__(self, p):
        a, b, tau = p
        r = a * (1.0 - b * np.exp(-self.x / tau)) - self.y
        return float(np.dot(r, r) / r.size)


def fit_relaxation(samples: Sequence, settings: Optional[DeSettings] = None) -> RelaxationFit:
    """Least-squares fit of ``y = a (1 - b exp(-x/tau))`` to ``(hours, Ah)`` pairs.

    Constant data carries no information on ``tau``: the result is
    ``b = 0`` with ``tau_identified=False`` (``tau`` is NaN).
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("samples must be (x, y) pairs")
    if arr.shape[0] < 3:
        raise FitError("need at least 3 samples")
    x, y = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(arr)):
        raise FitError("samples must be finite")
    if np.any(x < 0):
        raise FitError("rest times must be non-negative")
    if np.ptp(y) <= 1e-12 * max(1.0, abs(y).max()):
        return RelaxationFit(float(y.mean()), 0.0, math.nan, 0.0, False)
    res = differential_evolution(_RelaxationLoss(x, y), RELAXATION_BOUNDS,
                                 settings or RELAXATION_DE)
    a, b, tau = (float(v) for v in res.x)
    if b < 1e-9:
        return RelaxationFit(a, 0.0, math.nan, res.loss, False)
    return RelaxationFit(a, b, tau, res.loss, True)


# --- config and report files ------------------------------------------------

_DE_KEYS = {f.name: f.type for f in fields(DeSettings)}


def read_fit_config(path, base_bounds: Optional[ParameterBounds] = None):
    """Read bounds and DE settings from an INI file.

    ``[de]`` holds DeSettings fields; every other section is a parameter
    name with ``lower`` and/or ``upper``. Unspecified values keep defaults.
    """
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FitError(f"cannot read config {path}")
    bounds = base_bounds or default_ecm_bounds()
    kwargs = {}
    for section in cp.sections():
        if section == "de":
            for key, raw in cp.items("de"):
                if key not in _DE_KEYS:
                    raise FitError(f"{path}: unknown [de] key {key!r}")
                kwargs[key] = _de_value(key, raw, path)
            continue
        if section not in bounds.names:
            raise FitError(f"{path}: unknown parameter section [{section}]")
        extra = set(cp.options(section)) - {"lower", "upper"}
        if extra:
            raise FitError(f"{path}: [{section}] has unknown keys {sorted(extra)}")
        try:
            lower = cp.getfloat(section, "lower", fallback=None)
            upper = cp.getfloat(section, "upper", fallback=None)
            bounds = bounds.replace(section, lower, upper)
        except (ValueError, DeError) as exc:
            raise FitError(f"{path}: [{section}] {exc}") from None
    try:
        settings = DeSettings(**kwargs)
    except DeError as exc:
        raise FitError(f"{path}: {exc}") from None
    return bounds, settings


def _de_value(key, raw, path):
    raw = raw.strip()
    try:
        if key in ("population", "max_evaluations"):
            return None if raw.lower() == "none" else int(raw)
        if key in ("max_generations", "seed", "window"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise FitError(f"{path}: [de] {key} = {raw!r} is not a number") from None


def write_fit_config(path, bounds: ParameterBounds, settings: DeSettings):
    cp = configparser.ConfigParser()
    cp["de"] = {f.name: str(getattr(settings, f.name)) for f in fields(DeSettings)}
    for n, lo, hi in zip(bounds.names, bounds.lower, bounds.upper):
        cp[n] = {"lower": repr(lo), "upper": repr(hi)}
    with open(path, "w") as fh:
        cp.write(fh)


def parameter_table(params: EcmParameters):
    """Rows ``(parameter, value, unit)`` laid out like the fitted-value table."""
    return [
        ("R1", params.r1_branch * 1e3, "mOhm"),
        ("R2", params.r2_branch * 1e3, "mOhm"),
        ("Re", params.r_bridge * 1e3, "mOhm"),
        ("k", params.k, "-"),
        ("ke", params.ke, "-"),
        ("R0", params.r0 * 1e3, "mOhm"),
        ("Q_max_neg", params.q_max_neg, "Ah"),
        ("r_np", params.r_np, "-"),
        ("z1_neg(t0)", params.z0[0], "-"),
        ("z1_pos(t0)", params.z0[1], "-"),
        ("z2_neg(t0)", params.z0[2], "-"),
        ("z2_pos(t0)", params.z0[3], "-"),
    ]


def write_fit_report(out_dir, result: FitResult, params: Optional[EcmParameters] = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_loss_V2"])
        for g, v in enumerate(result.history):
            w.writerow([g, repr(float(v))])
    with open(out / "fit_vector.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value"])
        for n, v in zip(result.names, result.x):
            w.writerow([n, repr(float(v))])
    if params is not None:
        with open(out / "parameters.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "value", "unit"])
            for name, value, unit in parameter_table(params):
                w.writerow([name, repr(float(value)), unit])
