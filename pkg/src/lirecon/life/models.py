"""Linear, Gaussian-process and gradient-boosting regressors.

All three standardise features on the training rows. The boosted trees are
grown by exhaustive least-squares split search (compiled with numba).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from ..linear import LinearFit, Standardizer, ols

LR, GPR, GBR = "lr", "gpr", "gbr"
KINDS = (LR, GPR, GBR)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class GprSettings:
    length_scales: tuple = (0.3, 1.0, 3.0, 10.0)
    signal_vars: tuple = (0.3, 1.0, 3.0)
    noise_vars: tuple = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class GbrSettings:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    subsample: float = 1.0
    min_leaf: int = 1


@dataclass(frozen=True)
class ModelSettings:
    gpr: GprSettings = field(default_factory=GprSettings)
    gbr: GbrSettings = field(default_factory=GbrSettings)


# --- linear -----------------------------------------------------------------

@dataclass
class LinearModel:
    fit: LinearFit
    kind: str = LR

    @property
    def flagged(self):
        return self.fit.ridge_used

    def predict(self, X):
        return self.fit.predict(X)


# --- Gaussian process --------------------------------------------------------

def _sq_dists(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


@dataclass
class GaussianProcessModel:
    """SE kernel ``s2 exp(-d^2 / (2 l^2))`` plus noise, on standardised X and y."""

    st: Standardizer
    X: np.ndarray
    y_mean: float
    y_scale: float
    length: float
    signal: float
    noise: float
    alpha: np.ndarray
    log_ml: float
    kind: str = GPR
    flagged: bool = False

    def predict(self, X):
        Z = self.st.transform(np.atleast_2d(X))
        K = self.signal * np.exp(-0.5 * _sq_dists(Z, self.X) / self.length ** 2)
        return self.y_mean + self.y_scale * (K @ self.alpha)


def _gp_fit(Z, ys, length, signal, noise):
    n = Z.shape[0]
    K = signal * np.exp(-0.5 * _sq_dists(Z, Z) / length ** 2) + noise * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -math.inf, None
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, ys))
    lml = -0.5 * ys @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    return float(lml), alpha


def fit_gpr(X, y, settings: GprSettings = GprSettings()) -> GaussianProcessModel:
    st = Standardizer.fit(X)
    Z = st.transform(X)
    y_mean = float(np.mean(y))
    y_scale = float(np.std(y)) or 1.0
    ys = (np.asarray(y, dtype=float) - y_mean) / y_scale
    best = None
    # grid order is fixed, ties keep the first combination
    for ell in settings.length_scales:
        for s2 in settings.signal_vars:
            for nv in settings.noise_vars:
                lml, alpha = _gp_fit(Z, ys, ell, s2, nv)
                if alpha is not None and (best is None or lml > best[0]):
                    best = (lml, ell, s2, nv, alpha)
    if best is None:
        raise ModelError("no GPR hyperparameter combination gave a positive-definite kernel")
    lml, ell, s2, nv, alpha = best
    return GaussianProcessModel(st, Z, y_mean, y_scale, ell, s2, nv, alpha, lml)


# --- gradient boosting -------------------------------------------------------

@njit(cache=True)
def _best_split(X, r, idx, min_leaf):
    """Best (feature, threshold, sse) over all features for rows ``idx``."""
    n = idx.shape[0]
    best_f = -1
    best_thr = 0.0
    best_sse = np.inf
    total = 0.0
    total2 = 0.0
    for i in range(n):
        total += r[idx[i]]
        total2 += r[idx[i]] * r[idx[i]]
    for f in range(X.shape[1]):
        vals = np.empty(n)
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        left = 0.0
        left2 = 0.0
        for k in range(n - 1):
            rv = r[idx[order[k]]]
            left += rv
            left2 += rv * rv
            nl = k + 1
            nr = n - nl
            a = vals[order[k]]
            b = vals[order[k + 1]]
            if b <= a or nl < min_leaf or nr < min_leaf:
                continue
            right = total - left
            right2 = total2 - left2
            sse = (left2 - left * left / nl) + (right2 - right * right / nr)
            # strict improvement: ties keep the earlier feature / threshold
            if sse < best_sse - 1e-12:
                best_sse = sse
                best_f = f
                best_thr = 0.5 * (a + b)
    return best_f, best_thr, best_sse


@njit(cache=True)
def _grow(X, r, idx, depth, max_depth, min_leaf, feat, thr, left, right, value, count):
    """Grow a subtree in place; returns (node id, new node count)."""
    node = count
    count += 1
    m = 0.0
    for i in range(idx.shape[0]):
        m += r[idx[i]]
    m /= idx.shape[0]
    value[node] = m
    feat[node] = -1
    if depth >= max_depth or idx.shape[0] < 2 * min_leaf:
        return node, count
    f, t, sse = _best_split(X, r, idx, min_leaf)
    if f < 0:
        return node, count
    nl = 0
    for i in range(idx.shape[0]):
        if X[idx[i], f] <= t:
            nl += 1
    li = np.empty(nl, dtype=np.int64)
    ri = np.empty(idx.shape[0] - nl, dtype=np.int64)
    a = 0
    b = 0
    for i in range(idx.shape[0]):
        if X[idx[i], f] <= t:
            li[a] = idx[i]
            a += 1
        else:
            ri[b] = idx[i]
            b += 1
    feat[node] = f
    thr[node] = t
    ln, count = _grow(X, r, li, depth + 1, max_depth, min_leaf, feat, thr, left, right, value, count)
    rn, count = _grow(X, r, ri, depth + 1, max_depth, min_leaf, feat, thr, left, right, value, count)
    left[node] = ln
    right[node] = rn
    return node, count


@njit(cache=True)
def _tree_predict(X, feat, thr, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass
class RegressionTree:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def fit(cls, X, r, idx, max_depth, min_leaf=1):
        size = 2 ** (max_depth + 1)
        feat = np.full(size, -1, dtype=np.int64)
        thr = np.zeros(size)
        left = np.zeros(size, dtype=np.int64)
        right = np.zeros(size, dtype=np.int64)
        value = np.zeros(size)
        _, count = _grow(np.ascontiguousarray(X, dtype=float), np.asarray(r, dtype=float),
                         np.asarray(idx, dtype=np.int64), 0, max_depth, min_leaf,
                         feat, thr, left, right, value, 0)
        return cls(feat[:count], thr[:count], left[:count], right[:count], value[:count])

    def predict(self, X):
        return _tree_predict(np.ascontiguousarray(X, dtype=float), self.feat, self.thr,
                             self.left, self.right, self.value)


@dataclass
class GradientBoostingModel:
    st: Standardizer
    init: float
    trees: list
    learning_rate: float
    train_loss: list  # training MSE after 0, 1, ... trees
    kind: str = GBR
    flagged: bool = False

    def predict(self, X):
        Z = self.st.transform(np.atleast_2d(X))
        out = np.full(Z.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(Z)
        return out


def fit_gbr(X, y, settings: GbrSettings = GbrSettings(), seed: int = 0) -> GradientBoostingModel:
    if not 0 < settings.subsample <= 1:
        raise ModelError("subsample must lie in (0, 1]")
    st = Standardizer.fit(X)
    Z = st.transform(X)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    rng = np.random.default_rng(seed)
    pred = np.full(n, y.mean())
    losses = [float(np.mean((y - pred) ** 2))]
    trees = []
    all_idx = np.arange(n)
    for _ in range(settings.n_trees):
        if settings.subsample < 1:
            k = max(1, int(round(settings.subsample * n)))
            idx = np.sort(rng.choice(n, k, replace=False))
        else:
            idx = all_idx
        tree = RegressionTree.fit(Z, y - pred, idx, settings.max_depth, settings.min_leaf)
        pred = pred + settings.learning_rate * tree.predict(Z)
        trees.append(tree)
        losses.append(float(np.mean((y - pred) ** 2)))
    return GradientBoostingModel(st, float(y.mean()), trees, settings.learning_rate, losses)


# --- dispatch ----------------------------------------------------------------

def fit_model(X, y, kind: str, settings: Optional[ModelSettings] = None, seed: int = 0):
    """Fit one of ``lr``, ``gpr``, ``gbr`` on rows ``X`` (n x p) and labels ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ModelError("X must be (n, p) with len(y) == n")
    if X.shape[0] < 2:
        raise ModelError("need at least 2 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ModelError("features and labels must be finite")
    settings = settings or ModelSettings()
    kind = kind.lower()
    if kind == LR:
        return LinearModel(ols(X, y))
    if kind == GPR:
        return fit_gpr(X, y, settings.gpr)
    if kind == GBR:
        return fit_gbr(X, y, settings.gbr, seed)
    raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
