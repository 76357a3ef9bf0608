"""Penalized Cox regression and weighted Gaussian lasso, with cross-validated lambda."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from survcate import _linear_core as core
from survcate.survival import FoldAssignment

N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-4


class ConvergenceError(RuntimeError):
    """Coordinate descent exhausted its sweep budget."""

    def __init__(self, message, last_objective=float("nan")):
        super().__init__(message)
        self.last_objective = last_objective


@dataclass(frozen=True)
class HazardCurve:
    """Right-continuous nondecreasing cumulative hazard, 0 before the first knot."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if np.any(values < 0) or np.any(np.diff(values) < 0):
            raise ValueError("cumulative hazard must be nonnegative and nondecreasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.knots, t_arr, side="right") - 1
        if self.values.size == 0:
            out = np.zeros_like(t_arr)
        else:
            out = np.where(pos >= 0, self.values[np.maximum(pos, 0)], 0.0)
        return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class CoxLassoModel:
    coefficients: np.ndarray  # raw covariate scale
    baseline_cumhaz: HazardCurve
    lam: float
    center: np.ndarray
    scale: np.ndarray
    penalty_factors: np.ndarray

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        return (x - self.center) @ self.coefficients


@dataclass(frozen=True)
class LinearCateModel:
    intercept: float
    coefficients: np.ndarray  # raw covariate scale
    lam: float
    center: np.ndarray
    scale: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coefficients


@dataclass
class _CoxData:
    X: np.ndarray  # sorted by time, standardized
    event: np.ndarray
    group_of: np.ndarray
    group_start: np.ndarray
    group_deaths: np.ndarray
    times: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray


def _check_penalty_factors(pf, d):
    if pf is None:
        return np.ones(d)
    pf = np.asarray(pf, dtype=float)
    if pf.shape != (d,) or np.any(pf < 0) or not np.all(np.isfinite(pf)):
        raise ValueError(f"penalty_factors must be {d} finite nonnegative values")
    return pf


def _prepare_cox(design, followup, event, standardize) -> _CoxData:
    X = np.asarray(design, dtype=float)
    U = np.asarray(followup, dtype=float)
    D = np.asarray(event)
    if X.ndim != 2 or X.shape[0] != U.size or D.shape != U.shape:
        raise ValueError("design, followup and event have inconsistent shapes")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(U)):
        raise ValueError("design and followup must be finite")
    if not np.any(D == 1):
        raise ValueError("Cox regression needs at least one event")
    if standardize:
        center = X.mean(axis=0)
        scale = X.std(axis=0)
    else:
        center = np.zeros(X.shape[1])
        scale = np.where(np.ptp(X, axis=0) > 0, 1.0, 0.0)
    # a constant column cannot enter a partial likelihood: it shifts every eta alike
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    scale = np.where(active, scale, 1.0)
    order = np.argsort(U, kind="stable")
    Xs = np.asfortranarray((X[order] - center) / scale)
    Us = U[order]
    Ds = (D[order] == 1).astype(np.int8)
    times, first, group_of = np.unique(Us, return_index=True, return_inverse=True)
    deaths = np.add.reduceat(Ds.astype(float), first)
    return _CoxData(Xs, Ds, group_of.astype(np.int64), first.astype(np.int64), deaths,
                    times, center, scale, active)


def _cox_gradient(data: _CoxData, beta) -> np.ndarray:
    """Gradient of the scaled negative log partial likelihood in standardized coordinates."""
    _, grad, _ = core.cox_partials(data.X @ beta, data.event, data.group_of,
                                   data.group_start, data.group_deaths)
    return -(data.X.T @ grad) / data.X.shape[0]


def _cox_solve(data, lam, pf, beta, tol, max_sweeps, trace=None, coef_tol=1e-7):
    buf = np.empty(1001) if trace is None else trace
    obj, ok, sweeps, n_trace = core.cox_fit_one(
        data.X, data.event, data.group_of, data.group_start, data.group_deaths,
        float(lam), pf, data.active, beta, float(tol), float(coef_tol), int(max_sweeps), 0, buf)
    if not ok:
        raise ConvergenceError(
            f"Cox lasso did not converge within {max_sweeps} sweeps at lambda={lam:.4g}", obj)
    return obj, n_trace


def _cox_lambda_max(data, pf, tol, max_sweeps):
    beta = np.zeros(data.X.shape[1])
    if np.any((pf == 0) & data.active):
        _cox_solve(data, np.inf, pf, beta, tol, max_sweeps)
    g = np.abs(_cox_gradient(data, beta))
    pen = (pf > 0) & data.active
    if not np.any(pen):
        return 0.0, beta
    return float(np.max(g[pen] / pf[pen])), beta


def _breslow(data: _CoxData, beta_std) -> HazardCurve:
    eta = data.X @ beta_std
    risk = np.exp(eta - eta.max())
    at_risk = np.cumsum(risk[::-1])[::-1][data.group_start] * np.exp(eta.max())
    keep = data.group_deaths > 0
    return HazardCurve(data.times[keep], np.cumsum(data.group_deaths[keep] / at_risk[keep]))


def _to_model(data, beta_std, lam, pf) -> CoxLassoModel:
    beta_std = np.where(data.active, beta_std, 0.0)
    return CoxLassoModel(
        coefficients=beta_std / data.scale,
        baseline_cumhaz=_breslow(data, beta_std),
        lam=float(lam),
        center=data.center.copy(),
        scale=data.scale.copy(),
        penalty_factors=pf.copy(),
    )


def fit_cox_lasso(design, followup, event, lam, penalty_factors=None, *, standardize=True,
                  tol=1e-7, max_sweeps=10_000, trace=None) -> CoxLassoModel:
    """Minimize ``-loglik(beta)/n + lam * sum(pf * |beta|)`` with Breslow ties.

    The penalty acts on standardized coefficients; the returned coefficients
    are on the raw covariate scale.  ``trace``, if given, receives the objective
    after every accepted outer step.
    """
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    data = _prepare_cox(design, followup, event, standardize)
    pf = _check_penalty_factors(penalty_factors, data.X.shape[1])
    beta = np.zeros(data.X.shape[1])
    _cox_solve(data, lam, pf, beta, tol, max_sweeps, trace)
    return _to_model(data, beta, lam, pf)


def _lambda_path(lam_max, n_lambda, ratio):
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.geomspace(1.0, ratio, n_lambda)


PATH_COEF_TOL = 1e-4
PATH_MIN_LENGTH = 5
PATH_STOP_GAIN = 1e-5
PATH_MAX_EXPLAINED = 0.999


def _cox_path(data, pf, lambdas, tol, max_sweeps, beta0=None, early_stop=False):
    """Warm-started solutions along ``lambdas``.

    With ``early_stop`` the path is cut once the fraction of null deviance
    explained stalls or saturates, as glmnet does.
    """
    p = data.X.shape[1]
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    path = np.empty((lambdas.size, p))
    n = data.X.shape[0]
    ll0 = core.cox_loglik(data.X @ beta, data.event, data.group_start, data.group_deaths)
    prev = 0.0
    for i, lam in enumerate(lambdas):
        obj, _ = _cox_solve(data, lam, pf, beta, tol, max_sweeps, coef_tol=PATH_COEF_TOL)
        path[i] = beta
        if early_stop and ll0 < 0:
            ll = obj * -n + n * lam * np.sum(pf * np.abs(beta))
            explained = (ll - ll0) / -ll0
            if i + 1 >= PATH_MIN_LENGTH and (explained - prev < PATH_STOP_GAIN * explained
                                             or explained > PATH_MAX_EXPLAINED):
                return path[: i + 1]
            prev = explained
    return path


def _check_folds(folds: FoldAssignment, n):
    if folds.fold_index.shape != (n,):
        raise ValueError(f"fold assignment covers {folds.fold_index.size} rows, data has {n}")
    if folds.fold_index.min() < 0 or folds.fold_index.max() >= folds.n_folds:
        raise ValueError("fold labels out of range")


def cv_cox_lasso(design, followup, event, penalty_factors=None, folds: FoldAssignment = None, *,
                 standardize=True, n_lambda=N_LAMBDA, lambda_min_ratio=LAMBDA_MIN_RATIO,
                 tol=1e-7, max_sweeps=10_000) -> CoxLassoModel:
    """Cox lasso with lambda chosen by minimum cross-validated partial-likelihood deviance.

    Held-out fold ``k`` contributes ``loglik_all(b_k) - loglik_train(b_k)``
    where ``b_k`` is fitted without fold ``k``.
    """
    X = np.asarray(design, dtype=float)
    U = np.asarray(followup, dtype=float)
    D = (np.asarray(event) == 1).astype(np.int8)
    n = X.shape[0]
    if folds is None:
        raise ValueError("folds are required")
    _check_folds(folds, n)
    data = _prepare_cox(X, U, D, standardize)
    pf = _check_penalty_factors(penalty_factors, X.shape[1])
    lam_max, beta0 = _cox_lambda_max(data, pf, tol, max_sweeps)
    lambdas = _lambda_path(lam_max, n_lambda, lambda_min_ratio)
    full_path = _cox_path(data, pf, lambdas, tol, max_sweeps, beta0, early_stop=True)
    lambdas = lambdas[: full_path.shape[0]]
    if lambdas.size == 1:
        return _to_model(data, full_path[0], lambdas[0], pf)

    all_sorted = _prepare_cox(X, U, D, standardize=False)
    order_all = np.argsort(U, kind="stable")
    X_all_sorted = X[order_all]
    cv_pl = np.zeros(lambdas.size)
    used = 0
    for k in range(folds.n_folds):
        test = folds.members(k)
        train = folds.complement(k)
        if not np.any(D[test] == 1):
            warnings.warn(f"fold {k} has no events and is left out of the CV error",
                          RuntimeWarning, stacklevel=2)
            continue
        if not np.any(D[train] == 1):
            continue
        tr = _prepare_cox(X[train], U[train], D[train], standardize)
        path = _cox_path(tr, pf, lambdas, tol, max_sweeps)
        raw = np.where(tr.active, path, 0.0) / tr.scale
        X_train_sorted = X[train][np.argsort(U[train], kind="stable")]
        for i in range(lambdas.size):
            ll_all = core.cox_loglik(X_all_sorted @ raw[i], all_sorted.event,
                                     all_sorted.group_start, all_sorted.group_deaths)
            ll_tr = core.cox_loglik(X_train_sorted @ raw[i], tr.event,
                                    tr.group_start, tr.group_deaths)
            cv_pl[i] += ll_all - ll_tr
        used += 1
    if used == 0:
        raise ValueError("no cross-validation fold contains an event")
    best = int(np.argmin(-2.0 * cv_pl))
    return _to_model(data, full_path[best], lambdas[best], pf)


def predict_cox_survival(model: CoxLassoModel, x, t0):
    """``exp(-H(t0) * exp(eta))``; returns a float for one covariate vector."""
    if not np.isfinite(t0) or t0 < 0:
        raise ValueError("t0 must be finite and nonnegative")
    eta = model.linear_predictor(x)
    return np.exp(-model.baseline_cumhaz(float(t0)) * np.exp(eta))


# ---------------------------------------------------------------- weighted lasso


@dataclass
class _GaussData:
    Xs: np.ndarray
    yc: np.ndarray
    v: np.ndarray
    xv: np.ndarray
    ybar: float
    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray


def _prepare_gauss(X, y, weights) -> _GaussData:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],) or w.shape != y.shape:
        raise ValueError("X, y and weights have inconsistent shapes")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("X, y and weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("total weight must be positive")
    v = w / total
    center = v @ X
    scale = np.sqrt(v @ (X - center) ** 2)
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    scale = np.where(active, scale, 1.0)
    Xs = np.asfortranarray((X - center) / scale)
    ybar = float(v @ y)
    xv = np.where(active, v @ Xs**2, 0.0)
    return _GaussData(Xs, y - ybar, v, xv, ybar, center, scale, active)


def _gauss_solve(data, lam, beta, tol, max_sweeps):
    pf = np.ones(beta.size)
    ok, _ = core.gaussian_fit_one(data.Xs, data.yc, data.v, float(lam), pf, data.active,
                                  data.xv, beta, float(tol), int(max_sweeps))
    if not ok:
        raise ConvergenceError(f"weighted lasso did not converge at lambda={lam:.4g}")


def _gauss_model(data, beta, lam) -> LinearCateModel:
    coef = np.where(data.active, beta, 0.0) / data.scale
    return LinearCateModel(
        intercept=float(data.ybar - data.center @ coef),
        coefficients=coef,
        lam=float(lam),
        center=data.center.copy(),
        scale=data.scale.copy(),
    )


def fit_weighted_lasso(X, y, weights, lam, *, tol=1e-20, max_sweeps=1_000_000) -> LinearCateModel:
    """Minimize ``sum(w * (y - b0 - X b)^2) / sum(w) / 2 + lam * |b|_1`` with ``b0`` unpenalized."""
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    data = _prepare_gauss(X, y, weights)
    beta = np.zeros(data.Xs.shape[1])
    _gauss_solve(data, lam, beta, tol, max_sweeps)
    return _gauss_model(data, beta, lam)


def cv_weighted_lasso(X, y, weights, folds: FoldAssignment, *, n_lambda=N_LAMBDA,
                      lambda_min_ratio=LAMBDA_MIN_RATIO, tol=1e-14,
                      max_sweeps=1_000_000) -> LinearCateModel:
    """Weighted lasso with lambda minimizing held-out weighted squared error."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    _check_folds(folds, X.shape[0])
    data = _prepare_gauss(X, y, w)
    lam_max = float(np.max(np.abs(data.Xs.T @ (data.v * data.yc)) * data.active, initial=0.0))
    lambdas = _lambda_path(lam_max, n_lambda, lambda_min_ratio)
    p = X.shape[1]
    beta = np.zeros(p)
    full_path = np.empty((lambdas.size, p))
    for i, lam in enumerate(lambdas):
        _gauss_solve(data, lam, beta, tol, max_sweeps)
        full_path[i] = beta
    if lambdas.size == 1:
        return _gauss_model(data, full_path[0], lambdas[0])

    sse = np.zeros(lambdas.size)
    used = 0
    for k in range(folds.n_folds):
        test = folds.members(k)
        train = folds.complement(k)
        if w[test].sum() <= 0:
            warnings.warn(f"fold {k} has zero total weight and is left out of the CV error",
                          RuntimeWarning, stacklevel=2)
            continue
        if w[train].sum() <= 0:
            continue
        tr = _prepare_gauss(X[train], y[train], w[train])
        b = np.zeros(p)
        for i, lam in enumerate(lambdas):
            _gauss_solve(tr, lam, b, tol, max_sweeps)
            m = _gauss_model(tr, b, lam)
            resid = y[test] - m.predict(X[test])
            sse[i] += w[test] @ resid**2
        used += 1
    if used == 0:
        raise ValueError("every cross-validation fold has zero weight")
    best = int(np.argmin(sse))
    return _gauss_model(data, full_path[best], lambdas[best])
