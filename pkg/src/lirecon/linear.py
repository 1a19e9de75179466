"""Standardised ordinary least squares shared by the life and recovery models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE = 1e-8
COND_LIMIT = 1e10


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # constant columns stay constant (zero) after centring
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class LinearFit:
    """``y ~ intercept + coef . standardised(x)``."""

    intercept: float
    coef: np.ndarray
    standardizer: Standardizer
    ridge_used: bool
    condition: float

    def predict(self, X):
        return self.intercept + self.standardizer.transform(np.atleast_2d(X)) @ self.coef

    def raw_coefficients(self):
        """Coefficients and intercept on the original feature scale."""
        beta = self.coef / self.standardizer.scale
        return float(self.intercept - beta @ self.standardizer.mean), beta


def ols(X, y, ridge=RIDGE, cond_limit=COND_LIMIT) -> LinearFit:
    """OLS with intercept on standardised features.

    When the normal matrix has condition number above ``cond_limit`` (or is
    singular) a ridge of ``ridge`` is added to it and the fit is flagged.
    The intercept is never penalised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) with len(y) == n")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    st = Standardizer.fit(X)
    Z = st.transform(X)
    A = Z.T @ Z
    b = Z.T @ (y - y.mean())
    cond = float(np.linalg.cond(A)) if A.size else 1.0
    ridge_used = not np.isfinite(cond) or cond > cond_limit
    if ridge_used:
        A = A + ridge * np.eye(A.shape[0])
    coef = np.linalg.solve(A, b)
    return LinearFit(float(y.mean()), coef, st, bool(ridge_used), cond)
