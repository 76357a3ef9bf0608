"""Survival data containers and nonparametric survival curve estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored observations ``(X, W, U, D)`` for ``n`` subjects."""

    covariates: np.ndarray
    treatment: np.ndarray
    followup: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        W = np.asarray(self.treatment)
        U = np.asarray(self.followup, dtype=float)
        D = np.asarray(self.event)
        n = X.shape[0]
        if X.ndim != 2 or n < 1 or X.shape[1] < 1:
            raise ValueError("covariates must be a non-empty n x d matrix")
        for name, v in (("treatment", W), ("followup", U), ("event", D)):
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {v.shape}")
        if not np.all(np.isfinite(U)) or np.any(U < 0):
            raise ValueError("followup times must be finite and nonnegative")
        for name, v in (("treatment", W), ("event", D)):
            if not np.all((v == 0) | (v == 1)):
                raise ValueError(f"{name} entries must be 0 or 1")
        X = X.copy()
        X.setflags(write=False)
        W = W.astype(np.int8)
        D = D.astype(np.int8)
        U = U.copy()
        for v in (W, U, D):
            v.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", W)
        object.__setattr__(self, "followup", U)
        object.__setattr__(self, "event", D)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index)
        return SurvivalDataset(
            self.covariates[index], self.treatment[index], self.followup[index], self.event[index]
        )

    def arm(self, w: int) -> "SurvivalDataset":
        return self.subset(np.flatnonzero(self.treatment == w))


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous survival step function, equal to 1 before the first knot.

    Only the jump locations are stored; evaluation is a binary search.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] < 0):
            raise ValueError("knots must be nonnegative and strictly increasing")
        if np.any(values < 0) or np.any(values > 1) or np.any(np.diff(values) > 0):
            raise ValueError("values must lie in [0, 1] and be nonincreasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return eval_curve(self, t)


@dataclass(frozen=True)
class FoldAssignment:
    fold_index: np.ndarray
    n_folds: int

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_index != fold)


def _event_table(followup, event, weights):
    U = np.asarray(followup, dtype=float)
    D = np.asarray(event)
    if U.ndim != 1 or U.size == 0:
        raise ValueError("followup must be a non-empty 1-d array")
    if D.shape != U.shape:
        raise ValueError("followup and event lengths differ")
    if weights is None:
        w = np.ones_like(U)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != U.shape:
            raise ValueError("weights length differs from followup")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
    order = np.argsort(U, kind="stable")
    U, D, w = U[order], D[order].astype(bool), w[order]
    times, first = np.unique(U, return_index=True)
    # weight at risk at times[k] is everything from first[k] onward in sorted order
    at_risk = np.cumsum(w[::-1])[::-1][first]
    deaths = np.add.reduceat(np.where(D, w, 0.0), first)
    keep = deaths > 0
    return times[keep], deaths[keep], at_risk[keep]


def kaplan_meier(followup, event, weights=None) -> StepCurve:
    """Weighted product-limit estimator.

    Tied event times form a single jump against the risk set at that time;
    subjects censored at an event time count as at risk.
    """
    times, deaths, at_risk = _event_table(followup, event, weights)
    values = np.cumprod(1.0 - deaths / at_risk)
    return StepCurve(times, np.clip(values, 0.0, 1.0))


def nelson_aalen_survival(followup, event, weights) -> StepCurve:
    """``exp(-H)`` for the weighted Nelson-Aalen cumulative hazard ``H``."""
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("total weight must be positive")
    times, deaths, at_risk = _event_table(followup, event, w)
    return StepCurve(times, np.exp(-np.cumsum(deaths / at_risk)))


def eval_curve(curve: StepCurve, t):
    """Evaluate a step curve at ``t`` (scalar or array) with right-continuity."""
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)) or np.any(t_arr < 0):
        raise ValueError("evaluation times must be finite and nonnegative")
    if curve.knots.size == 0:
        out = np.ones_like(t_arr)
    else:
        pos = np.searchsorted(curve.knots, t_arr, side="right") - 1
        out = np.where(pos >= 0, curve.values[np.maximum(pos, 0)], 1.0)
    if np.ndim(t) == 0:
        return float(out)
    return out


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Random balanced partition of ``range(n)`` into ``n_folds`` folds."""
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n < n_folds:
        raise ValueError(f"cannot split {n} rows into {n_folds} nonempty folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_index = np.empty(n, dtype=np.int64)
    fold_index[perm] = np.arange(n) % n_folds
    return FoldAssignment(fold_index, n_folds)
