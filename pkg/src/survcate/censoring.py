"""Complete cases and inverse-probability-of-censoring weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from survcate.forest import ForestParams, fit_survival_forest, predict_survival_forest
from survcate.survival import SurvivalDataset, eval_curve, kaplan_meier, make_folds

POSITIVITY_FLOOR = 0.05


class PositivityError(ValueError):
    """An estimated probability of remaining uncensored fell below the floor."""

    def __init__(self, index, value, floor):
        super().__init__(
            f"censoring survival {value:.4g} below positivity floor {floor} for row {index}")
        self.index = int(index)
        self.value = float(value)


@dataclass(frozen=True)
class IpcwResult:
    complete_index: np.ndarray
    weights: np.ndarray
    observed_outcome: np.ndarray  # 1{U > t0} on the complete cases

    def __post_init__(self):
        if not (self.complete_index.shape == self.weights.shape == self.observed_outcome.shape):
            raise ValueError("IPCW arrays must be aligned")


def _check_t0(t0):
    if not np.isfinite(t0) or t0 <= 0:
        raise ValueError("t0 must be positive and finite")


def complete_cases(dataset: SurvivalDataset, t0: float) -> np.ndarray:
    """Rows whose survival status at ``t0`` is known: an event was seen or follow-up reached ``t0``."""
    _check_t0(t0)
    idx = np.flatnonzero((dataset.event == 1) | (dataset.followup >= t0))
    if idx.size == 0:
        raise ValueError(f"no complete cases at t0={t0}")
    return idx


def _finish(dataset, t0, idx, s_c, floor):
    low = s_c < floor
    if np.any(low):
        j = int(np.flatnonzero(low)[0])
        raise PositivityError(idx[j], s_c[j], floor)
    weights = 1.0 / s_c
    outcome = (dataset.followup[idx] > t0).astype(np.int8)
    return IpcwResult(idx, weights, outcome)


def km_ipcw(dataset: SurvivalDataset, t0: float, n_folds: int = 10, seed: int = 0,
            positivity_floor: float = POSITIVITY_FLOOR) -> IpcwResult:
    """Weights ``1 / S_C(min(U_i, t0))`` from a censoring Kaplan-Meier fitted without row i's fold."""
    idx = complete_cases(dataset, t0)
    folds = make_folds(dataset.n, n_folds, seed)
    horizon = np.minimum(dataset.followup, t0)
    censored = 1 - dataset.event
    s_c = np.empty(idx.size)
    fold_of = folds.fold_index[idx]
    for k in range(n_folds):
        rows = fold_of == k
        if not np.any(rows):
            continue
        train = folds.complement(k)
        curve = kaplan_meier(dataset.followup[train], censored[train])
        s_c[rows] = eval_curve(curve, horizon[idx[rows]])
    return _finish(dataset, t0, idx, s_c, positivity_floor)


def forest_ipcw(dataset: SurvivalDataset, t0: float, params: ForestParams,
                positivity_floor: float = POSITIVITY_FLOOR) -> IpcwResult:
    """Weights from out-of-bag censoring survival of a forest fitted on ``([X, W], U, 1 - D)``."""
    idx = complete_cases(dataset, t0)
    censored = 1 - dataset.event
    if censored.sum() == 0:
        return _finish(dataset, t0, idx, np.ones(idx.size), positivity_floor)
    design = np.column_stack([dataset.covariates, dataset.treatment])
    forest = fit_survival_forest(design, dataset.followup, censored, params)
    horizon = np.minimum(dataset.followup[idx], t0)
    s_c = predict_survival_forest(forest, design[idx], horizon, oob_for=idx)
    return _finish(dataset, t0, idx, np.atleast_1d(s_c), positivity_floor)
