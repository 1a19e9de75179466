"""Differential evolution (rand/1/bin) for bound-constrained minimisation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class DeError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterBounds:
    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if not names:
            raise DeError("bounds are empty")
        if not (len(names) == len(lo) == len(hi)):
            raise DeError("names, lower and upper must have equal length")
        if len(set(names)) != len(names):
            raise DeError("parameter names must be unique")
        for n, a, b in zip(names, lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
                raise DeError(f"{n}: need finite lower < upper, got [{a}, {b}]")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs, names=None):
        pairs = list(pairs)
        names = names or [f"x{i}" for i in range(len(pairs))]
        return cls(tuple(names), tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def dim(self):
        return len(self.names)

    def arrays(self):
        return np.array(self.lower), np.array(self.upper)

    def contains(self, x):
        lo, hi = self.arrays()
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))

    def replace(self, name, lower=None, upper=None):
        i = self.names.index(name)
        lo, hi = list(self.lower), list(self.upper)
        if lower is not None:
            lo[i] = lower
        if upper is not None:
            hi[i] = upper
        return ParameterBounds(self.names, tuple(lo), tuple(hi))


@dataclass(frozen=True)
class DeSettings:
    """``population=None`` means 15 members per dimension. The run stops
    when the best loss improved by no more than ``tol * (1 + |best|)`` over
    the last ``window`` generations, or at the generation / evaluation cap."""

    population: Optional[int] = None
    mutation: float = 0.8
    crossover: float = 0.9
    max_generations: int = 1000
    tol: float = 1e-12
    seed: int = 0
    window: int = 30
    max_evaluations: Optional[int] = None

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise DeError("population must be >= 4")
        if not 0.0 < self.mutation <= 2.0:
            raise DeError("mutation factor F must lie in (0, 2]")
        if not 0.0 <= self.crossover <= 1.0:
            raise DeError("crossover rate CR must lie in [0, 1]")
        if self.max_generations < 1 or self.window < 1:
            raise DeError("max_generations and window must be >= 1")
        if not self.tol >= 0:
            raise DeError("tol must be non-negative")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise DeError("max_evaluations must be positive")

    def population_size(self, dim):
        return self.population if self.population is not None else 15 * dim


@dataclass
class FitResult:
    x: np.ndarray
    loss: float
    generations: int
    evaluations: int
    converged: bool
    history: list = field(default_factory=list)  # best loss after each generation
    names: tuple = ()

    def as_dict(self):
        return dict(zip(self.names, (float(v) for v in self.x)))


def _score(value):
    try:
        v = float(value)
    except (TypeError, ValueError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def differential_evolution(
    objective: Callable[[np.ndarray], float],
    bounds: ParameterBounds,
    settings: Optional[DeSettings] = None,
    map_fn: Callable = map,
    init: Optional[Sequence] = None,
    callback: Optional[Callable] = None,
) -> FitResult:
    """Minimise ``objective`` over the box ``bounds``.

    Every generation builds all trial vectors first, evaluates them through
    ``map_fn`` (which may run concurrently), then applies greedy selection in
    member order, so the result only depends on the seed. Non-finite losses
    and exceptions count as +inf. ``init`` optionally replaces the first
    members of the random initial population. ``callback(generation, x,
    loss)`` is called with the best member after every generation.
    """
    settings = settings or DeSettings()
    if not isinstance(bounds, ParameterBounds):
        raise DeError("bounds must be a ParameterBounds")
    dim = bounds.dim
    npop = settings.population_size(dim)
    if npop < 4:
        raise DeError("population must be >= 4")
    rng = np.random.default_rng(settings.seed)
    lo, hi = bounds.arrays()
    span = hi - lo
    max_evals = settings.max_evaluations or math.inf

    pop = lo + rng.random((npop, dim)) * span
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=float))
        k = min(len(init), npop)
        pop[:k] = np.clip(init[:k], lo, hi)

    def evaluate(batch):
        return np.array([_score(v) for v in map_fn(_safe(objective), list(batch))])

    fit = evaluate(pop)
    evals = npop
    best = int(np.argmin(fit))
    history = [float(fit[best])]
    converged = False
    gen = 0
    while gen < settings.max_generations and evals + npop <= max_evals:
        gen += 1
        trials = np.empty_like(pop)
        for i in range(npop):
            others = [j for j in range(npop) if j != i]
            r1, r2, r3 = rng.choice(others, 3, replace=False)
            mutant = pop[r1] + settings.mutation * (pop[r2] - pop[r3])
            cross = rng.random(dim) < settings.crossover
            cross[rng.integers(dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), lo, hi)
        tfit = evaluate(trials)
        evals += npop
        better = tfit <= fit
        pop[better] = trials[better]
        fit[better] = tfit[better]
        best = int(np.argmin(fit))
        history.append(float(fit[best]))
        if callback is not None:
            callback(gen, pop[best].copy(), history[-1])
        if len(history) > settings.window and math.isfinite(history[-1]):
            gain = history[-1 - settings.window] - history[-1]
            if gain <= settings.tol * (1.0 + abs(history[-1])):
                converged = True
                break
    if not math.isfinite(fit[best]):
        raise DeError("objective was never finite on the evaluated population")
    return FitResult(pop[best].copy(), float(fit[best]), gen, evals, converged, history,
                     bounds.names)


class _safe:
    """Wrap an objective so exceptions score +inf (picklable for process pools)."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x):
        try:
            return self.fn(np.asarray(x, dtype=float))
        except Exception:  # noqa: BLE001 - any failure is a bad candidate
            return math.inf
