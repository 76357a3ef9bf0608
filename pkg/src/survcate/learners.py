"""S, T, X, R and M metalearners for the survival-probability difference at a horizon t0."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from survcate.censoring import (
    POSITIVITY_FLOOR,
    IpcwResult,
    complete_cases,
    forest_ipcw,
    km_ipcw,
)
from survcate.forest import (
    Forest,
    ForestParams,
    fit_regression_forest,
    fit_survival_forest,
    oob_predict_survival,
    predict_regression_forest,
    predict_survival_forest,
    reference_forest_params,
)
from survcate.linear import (
    CoxLassoModel,
    LinearCateModel,
    cv_cox_lasso,
    cv_weighted_lasso,
    fit_cox_lasso,
    predict_cox_survival,
)
from survcate.survival import SurvivalDataset, make_folds

LEARNERS = ("S", "T", "X", "R", "M", "CPH")
RISK_MODELS = ("CoxLasso", "SurvivalForest", None)
CATE_MODELS = ("Lasso", "Forest", None)
CENSORING_MODELS = ("KaplanMeier", "SurvivalForest", None)

_LETTER_RISK = {"L": "CoxLasso", "F": "SurvivalForest", "*": None}
_LETTER_CATE = {"L": "Lasso", "F": "Forest", "*": None}

# (learner, risk, cate) cells of the estimator grid
GRID = {
    "SL*": ("S", "CoxLasso", None),
    "TL*": ("T", "CoxLasso", None),
    "SF*": ("S", "SurvivalForest", None),
    "TF*": ("T", "SurvivalForest", None),
    "XLL": ("X", "CoxLasso", "Lasso"),
    "XFL": ("X", "SurvivalForest", "Lasso"),
    "XFF": ("X", "SurvivalForest", "Forest"),
    "RLL": ("R", "CoxLasso", "Lasso"),
    "RFL": ("R", "SurvivalForest", "Lasso"),
    "RFF": ("R", "SurvivalForest", "Forest"),
    "M*L": ("M", None, "Lasso"),
    "M*F": ("M", None, "Forest"),
    "CPH": ("CPH", None, None),
}
_CENSORING_SUFFIX = {"KM": "KaplanMeier", "SF": "SurvivalForest"}

LOW_EVENT_RATE = 0.10
LOW_EVENT_ALPHA = 0.01

# tags for deriving independent child seeds
_FOLDS, _RISK1, _RISK0, _RISK, _CENS, _CATE, _CATE1, _CATE0, _OOF = range(9)


@dataclass(frozen=True)
class LearnerSpec:
    learner: str
    risk_model: str | None
    cate_model: str | None
    censoring_model: str | None
    e: float
    t0: float

    def __post_init__(self):
        if not 0 < self.e < 1:
            raise ValueError("treatment probability e must lie in (0, 1)")
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if (self.learner, self.risk_model, self.cate_model) not in GRID.values():
            raise ValueError(
                f"({self.learner}, {self.risk_model}, {self.cate_model}) is not in the estimator grid")
        needs = self.learner in ("X", "R", "M")
        if needs and self.censoring_model not in ("KaplanMeier", "SurvivalForest"):
            raise ValueError(f"{self.learner}-learner needs a censoring model")
        if not needs and self.censoring_model is not None:
            raise ValueError(f"{self.learner} does not use a censoring model")

    @property
    def acronym(self) -> str:
        for name, cell in GRID.items():
            if cell == (self.learner, self.risk_model, self.cate_model):
                if self.censoring_model == "SurvivalForest":
                    return name + "-SF"
                return name
        raise AssertionError("unreachable")


def parse_estimator(name: str, e: float, t0: float) -> LearnerSpec:
    """``"RLL"`` or ``"RLL-SF"`` style names; ``-KM`` (the default) and ``-SF`` pick the censoring model."""
    base, _, suffix = name.partition("-")
    if base not in GRID:
        raise ValueError(f"unknown estimator {name!r}")
    learner, risk, cate = GRID[base]
    if learner in ("X", "R", "M"):
        if suffix and suffix not in _CENSORING_SUFFIX:
            raise ValueError(f"unknown censoring suffix in {name!r}")
        cens = _CENSORING_SUFFIX[suffix or "KM"]
    else:
        if suffix:
            raise ValueError(f"{base} takes no censoring suffix")
        cens = None
    return LearnerSpec(learner, risk, cate, cens, e, t0)


def valid_estimator(name: str) -> bool:
    try:
        parse_estimator(name, 0.5, 1.0)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class LearnerSettings:
    forest: ForestParams = field(default_factory=reference_forest_params)
    n_folds: int = 10
    positivity_floor: float = POSITIVITY_FLOOR


def _child_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), *tags]).generate_state(1)[0])


# ---------------------------------------------------------------- fitted models


class RiskModel:
    """Predicts P(T > t0 | x) for one treatment arm or a fixed design."""

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class CoxRisk(RiskModel):
    model: CoxLassoModel
    t0: float

    def predict(self, X):
        return np.atleast_1d(predict_cox_survival(self.model, np.atleast_2d(X), self.t0))


@dataclass(frozen=True)
class ForestRisk(RiskModel):
    forest: Forest
    t0: float

    def predict(self, X, oob_for=None):
        return np.atleast_1d(predict_survival_forest(self.forest, np.atleast_2d(X), self.t0, oob_for))

    def oob_predict(self):
        return oob_predict_survival(self.forest, self.t0)


class CateModel:
    """Fitted CATE predictor; outputs are clamped to [-1, 1]."""

    def raw_predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_with_clamps(self, X):
        raw = np.asarray(self.raw_predict(np.atleast_2d(np.asarray(X, dtype=float))), dtype=float)
        if not np.all(np.isfinite(raw)):
            raise FloatingPointError("non-finite CATE prediction")
        n_clamped = int(np.count_nonzero(np.abs(raw) > 1.0))
        return np.clip(raw, -1.0, 1.0), n_clamped

    def predict(self, X) -> np.ndarray:
        return self.predict_with_clamps(X)[0]


@dataclass(frozen=True)
class SCoxCate(CateModel):
    model: CoxLassoModel
    center: np.ndarray
    scale: np.ndarray
    t0: float

    def raw_predict(self, X):
        Z = (X - self.center) / self.scale
        return (predict_cox_survival(self.model, _s_design(Z, 0.5), self.t0)
                - predict_cox_survival(self.model, _s_design(Z, -0.5), self.t0))


@dataclass(frozen=True)
class SForestCate(CateModel):
    risk: ForestRisk

    def raw_predict(self, X):
        ones = np.ones((X.shape[0], 1))
        return (self.risk.predict(np.hstack([X, ones]))
                - self.risk.predict(np.hstack([X, 0 * ones])))


@dataclass(frozen=True)
class TCate(CateModel):
    risk1: RiskModel
    risk0: RiskModel

    def raw_predict(self, X):
        return self.risk1.predict(X) - self.risk0.predict(X)


def _regressor_predict(model, X):
    if isinstance(model, LinearCateModel):
        return model.predict(X)
    return np.atleast_1d(predict_regression_forest(model, X))


@dataclass(frozen=True)
class RegressionCate(CateModel):
    """A weighted regression of a pseudo-outcome on covariates (M and R learners)."""

    model: object

    def raw_predict(self, X):
        return _regressor_predict(self.model, X)


@dataclass(frozen=True)
class XCate(CateModel):
    tau1: object
    tau0: object
    e: float

    def raw_predict(self, X):
        return (1 - self.e) * _regressor_predict(self.tau1, X) + self.e * _regressor_predict(self.tau0, X)


@dataclass(frozen=True)
class PseudoOutcome:
    index: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    kind: str


@dataclass(frozen=True)
class NuisanceEstimates:
    mu1_oob: np.ndarray
    mu0_oob: np.ndarray
    m_hat: np.ndarray


# ---------------------------------------------------------------- building blocks


def _s_design(Z, w_tilde):
    w = np.broadcast_to(np.asarray(w_tilde, dtype=float), (Z.shape[0],))[:, None]
    return np.hstack([Z, w, w * Z])


def _require_arms(ds: SurvivalDataset):
    for w in (0, 1):
        if not np.any(ds.treatment == w):
            raise ValueError(f"treatment arm {w} is empty")


def _risk_forest_params(settings: LearnerSettings, event, seed) -> ForestParams:
    params = settings.forest.with_seed(seed)
    if np.mean(event) < LOW_EVENT_RATE:
        params = replace(params, alpha_imbalance=LOW_EVENT_ALPHA)
    return params


def _fit_cox_risk(X, U, D, t0, settings, seed) -> CoxRisk:
    if not np.any(D == 1):
        raise ValueError("risk model training data has no events")
    folds = make_folds(X.shape[0], settings.n_folds, seed)
    return CoxRisk(cv_cox_lasso(X, U, D, folds=folds), t0)


def _fit_forest_risk(X, U, D, t0, settings, seed) -> ForestRisk:
    if not np.any(D == 1):
        raise ValueError("risk model training data has no events")
    return ForestRisk(fit_survival_forest(X, U, D, _risk_forest_params(settings, D, seed)), t0)


def _fit_arm_risk(ds, w, risk_kind, t0, settings, seed) -> RiskModel:
    arm = ds.arm(w)
    fit = _fit_cox_risk if risk_kind == "CoxLasso" else _fit_forest_risk
    return fit(arm.covariates, arm.followup, arm.event, t0, settings, seed)


def _fit_regressor(cate_kind, X, y, weights, settings, seed):
    if cate_kind == "Lasso":
        return cv_weighted_lasso(X, y, weights, make_folds(X.shape[0], settings.n_folds, seed))
    return fit_regression_forest(X, y, weights, settings.forest.with_seed(seed))


def _ipcw(ds, t0, censoring_kind, settings, seed) -> IpcwResult:
    if censoring_kind == "KaplanMeier":
        return km_ipcw(ds, t0, settings.n_folds, seed, settings.positivity_floor)
    return forest_ipcw(ds, t0, settings.forest.with_seed(seed), settings.positivity_floor)


# ---------------------------------------------------------------- learners


def fit_s_learner(dataset: SurvivalDataset, t0, risk_kind, e=0.5, *, seed=0,
                  settings: LearnerSettings | None = None) -> CateModel:
    """Treatment as a covariate; the Lasso variant uses ``[x, w - 1/2, (w - 1/2) x]``."""
    settings = settings or LearnerSettings()
    ds = dataset
    if risk_kind == "SurvivalForest":
        design = np.column_stack([ds.covariates, ds.treatment])
        return SForestCate(_fit_forest_risk(design, ds.followup, ds.event, t0, settings,
                                            _child_seed(seed, _RISK)))
    center, scale, design, pf = _s_lasso_inputs(ds)
    folds = make_folds(ds.n, settings.n_folds, _child_seed(seed, _FOLDS))
    model = cv_cox_lasso(design, ds.followup, ds.event, pf, folds, standardize=False)
    return SCoxCate(model, center, scale, t0)


def _s_lasso_inputs(ds):
    X = ds.covariates
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - center) / scale
    design = _s_design(Z, ds.treatment - 0.5)
    d = X.shape[1]
    pf = np.ones(2 * d + 1)
    pf[d] = 0.0
    return center, scale, design, pf


def fit_cph_baseline(dataset: SurvivalDataset, t0, e=0.5) -> CateModel:
    """Unpenalized Cox model on the S-learner interaction design."""
    center, scale, design, pf = _s_lasso_inputs(dataset)
    model = fit_cox_lasso(design, dataset.followup, dataset.event, 0.0, pf, standardize=False)
    return SCoxCate(model, center, scale, t0)


def fit_t_learner(dataset: SurvivalDataset, t0, risk_kind, *, seed=0,
                  settings: LearnerSettings | None = None) -> CateModel:
    settings = settings or LearnerSettings()
    _require_arms(dataset)
    r1 = _fit_arm_risk(dataset, 1, risk_kind, t0, settings, _child_seed(seed, _RISK1))
    r0 = _fit_arm_risk(dataset, 0, risk_kind, t0, settings, _child_seed(seed, _RISK0))
    return TCate(r1, r0)


def compute_m_scores(dataset: SurvivalDataset, t0, e, ipcw: IpcwResult) -> PseudoOutcome:
    """Horizon survival status scaled by the inverse treatment probability of the observed arm."""
    idx = ipcw.complete_index
    W = dataset.treatment[idx]
    Y = ipcw.observed_outcome.astype(float)
    values = Y * (W / e - (1 - W) / (1 - e))
    return PseudoOutcome(idx, values, ipcw.weights.copy(), "M")


def fit_m_learner(dataset: SurvivalDataset, t0, cate_kind, e, censoring_kind="KaplanMeier", *,
                  seed=0, settings: LearnerSettings | None = None) -> CateModel:
    settings = settings or LearnerSettings()
    ipcw = _ipcw(dataset, t0, censoring_kind, settings, _child_seed(seed, _CENS))
    scores = compute_m_scores(dataset, t0, e, ipcw)
    X = dataset.covariates[scores.index]
    return RegressionCate(_fit_regressor(cate_kind, X, scores.values, scores.weights, settings,
                                         _child_seed(seed, _CATE)))


def fit_x_learner(dataset: SurvivalDataset, t0, risk_kind, cate_kind, e,
                  censoring_kind="KaplanMeier", *, seed=0,
                  settings: LearnerSettings | None = None) -> CateModel:
    settings = settings or LearnerSettings()
    _require_arms(dataset)
    ds = dataset
    r1 = _fit_arm_risk(ds, 1, risk_kind, t0, settings, _child_seed(seed, _RISK1))
    r0 = _fit_arm_risk(ds, 0, risk_kind, t0, settings, _child_seed(seed, _RISK0))
    ipcw = _ipcw(ds, t0, censoring_kind, settings, _child_seed(seed, _CENS))
    idx = ipcw.complete_index
    W = ds.treatment[idx]
    Y = ipcw.observed_outcome.astype(float)
    X = ds.covariates[idx]
    fits = {}
    for w, risk_other, tag in ((1, r0, _CATE1), (0, r1, _CATE0)):
        rows = W == w
        if not np.any(rows):
            raise ValueError(f"no complete cases in treatment arm {w}")
        imputed = risk_other.predict(X[rows])
        response = Y[rows] - imputed if w == 1 else imputed - Y[rows]
        fits[w] = _fit_regressor(cate_kind, X[rows], response, ipcw.weights[rows], settings,
                                 _child_seed(seed, tag))
    return XCate(fits[1], fits[0], e)


def compute_r_nuisance(dataset: SurvivalDataset, t0, risk_kind, e, *, seed=0,
                       settings: LearnerSettings | None = None) -> NuisanceEstimates:
    """Arm-wise survival predictions for every row that never used that row in fitting.

    Forest risk models use out-of-bag predictions for their own training rows;
    Cox-Lasso risk models are cross-fitted over ``settings.n_folds`` folds.
    """
    settings = settings or LearnerSettings()
    _require_arms(dataset)
    ds = dataset
    n = ds.n
    mu = {0: np.empty(n), 1: np.empty(n)}
    if risk_kind == "SurvivalForest":
        for w, tag in ((1, _RISK1), (0, _RISK0)):
            rows = np.flatnonzero(ds.treatment == w)
            other = np.flatnonzero(ds.treatment != w)
            risk = _fit_arm_risk(ds, w, risk_kind, t0, settings, _child_seed(seed, tag))
            mu[w][rows] = risk.oob_predict()
            if other.size:
                mu[w][other] = risk.predict(ds.covariates[other])
    else:
        folds = make_folds(n, settings.n_folds, _child_seed(seed, _OOF))
        for k in range(folds.n_folds):
            held = folds.members(k)
            train = ds.subset(folds.complement(k))
            for w, tag in ((1, _RISK1), (0, _RISK0)):
                risk = _fit_arm_risk(train, w, risk_kind, t0, settings, _child_seed(seed, tag, k))
                mu[w][held] = risk.predict(ds.covariates[held])
    m_hat = e * mu[1] + (1 - e) * mu[0]
    return NuisanceEstimates(mu[1], mu[0], m_hat)


def r_pseudo_outcomes(dataset, e, nuisance: NuisanceEstimates, ipcw: IpcwResult) -> PseudoOutcome:
    idx = ipcw.complete_index
    resid_w = dataset.treatment[idx] - e
    resid_y = ipcw.observed_outcome - nuisance.m_hat[idx]
    return PseudoOutcome(idx, resid_y / resid_w, ipcw.weights * resid_w**2, "R")


def fit_r_learner(dataset: SurvivalDataset, t0, risk_kind, cate_kind, e,
                  censoring_kind="KaplanMeier", *, seed=0,
                  settings: LearnerSettings | None = None, nuisance=None) -> CateModel:
    """Weighted regression of ``(Y - m) / (W - e)`` with weights ``K (W - e)^2``."""
    settings = settings or LearnerSettings()
    if nuisance is None:
        nuisance = compute_r_nuisance(dataset, t0, risk_kind, e, seed=seed, settings=settings)
    ipcw = _ipcw(dataset, t0, censoring_kind, settings, _child_seed(seed, _CENS))
    pseudo = r_pseudo_outcomes(dataset, e, nuisance, ipcw)
    X = dataset.covariates[pseudo.index]
    return RegressionCate(_fit_regressor(cate_kind, X, pseudo.values, pseudo.weights, settings,
                                         _child_seed(seed, _CATE)))


def r_learner_constant_ate(dataset: SurvivalDataset, t0, risk_kind, e,
                           censoring_kind="KaplanMeier", *, seed=0,
                           settings: LearnerSettings | None = None, nuisance=None) -> float:
    """No-intercept weighted slope of ``Y - m`` on ``W - e`` over complete cases."""
    settings = settings or LearnerSettings()
    if nuisance is None:
        nuisance = compute_r_nuisance(dataset, t0, risk_kind, e, seed=seed, settings=settings)
    ipcw = _ipcw(dataset, t0, censoring_kind, settings, _child_seed(seed, _CENS))
    idx = ipcw.complete_index
    rw = dataset.treatment[idx] - e
    ry = ipcw.observed_outcome - nuisance.m_hat[idx]
    return float(np.sum(ipcw.weights * rw * ry) / np.sum(ipcw.weights * rw**2))


def fit_cate(spec: LearnerSpec, dataset: SurvivalDataset, seed: int = 0,
             settings: LearnerSettings | None = None) -> CateModel:
    """Fit the metalearner described by ``spec``."""
    settings = settings or LearnerSettings()
    if dataset.n < 2:
        raise ValueError("dataset is too small")
    kw = {"seed": seed, "settings": settings}
    t0, e = spec.t0, spec.e
    if spec.learner == "S":
        return fit_s_learner(dataset, t0, spec.risk_model, e, **kw)
    if spec.learner == "CPH":
        return fit_cph_baseline(dataset, t0, e)
    if spec.learner == "T":
        return fit_t_learner(dataset, t0, spec.risk_model, **kw)
    if spec.learner == "M":
        return fit_m_learner(dataset, t0, spec.cate_model, e, spec.censoring_model, **kw)
    if spec.learner == "X":
        return fit_x_learner(dataset, t0, spec.risk_model, spec.cate_model, e,
                             spec.censoring_model, **kw)
    return fit_r_learner(dataset, t0, spec.risk_model, spec.cate_model, e,
                         spec.censoring_model, **kw)
