import math

import numpy as np
import pytest

from survcate.censoring import IpcwResult, km_ipcw
from survcate.dgp import Censoring, DgpSpec, get_dgp, sample, true_cate, true_mu
from survcate.forest import ForestParams, reference_forest_params
from survcate.learners import (
    _CENS,
    GRID,
    LearnerSettings,
    LearnerSpec,
    NuisanceEstimates,
    RegressionCate,
    RiskModel,
    SCoxCate,
    TCate,
    XCate,
    _child_seed,
    compute_m_scores,
    compute_r_nuisance,
    fit_cate,
    fit_cph_baseline,
    fit_m_learner,
    fit_r_learner,
    fit_s_learner,
    fit_t_learner,
    parse_estimator,
    r_learner_constant_ate,
    r_pseudo_outcomes,
    valid_estimator,
)
from survcate.linear import CoxLassoModel, HazardCurve, LinearCateModel
from survcate.metrics import rrmse
from survcate.survival import SurvivalDataset

FAST = LearnerSettings(forest=ForestParams(num_trees=40, seed=0))
DEPTH0 = LearnerSettings(forest=ForestParams(num_trees=1, subsample_fraction=1.0, min_node_size=100_000))


class ConstantRisk(RiskModel):
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


def linear_cate(intercept, coef):
    coef = np.asarray(coef, dtype=float)
    return LinearCateModel(intercept, coef, 0.0, np.zeros(coef.size), np.ones(coef.size))


def uncensored(n, seed, d=3, effect=0.0):
    """Exponential event times, no censoring, randomized treatment."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    W = rng.integers(0, 2, n)
    T = rng.exponential(size=n) * np.exp(-effect * W)
    return SurvivalDataset(X, W, T, np.ones(n, dtype=int))


def small_sim(dgp_id="complexity/linR1-linTau1", n=600, seed=0):
    spec = get_dgp(dgp_id)
    return spec, sample(spec, n=n, seed=seed)


class TestGrid:
    def test_all_cells_parse(self):
        for name in GRID:
            spec = parse_estimator(name, 0.5, 1.0)
            assert spec.acronym == name
        for name in ("XLL-SF", "RFF-SF", "M*F-SF"):
            assert parse_estimator(name, 0.5, 1.0).acronym == name
        assert parse_estimator("RLL-KM", 0.5, 1.0).acronym == "RLL"

    @pytest.mark.parametrize("name", ["SLL", "TFF", "XL*", "RL*", "MLL", "CPH-SF", "TL*-SF", "RLL-XX", "QLL"])
    def test_rejected(self, name):
        assert not valid_estimator(name)
        with pytest.raises(ValueError):
            parse_estimator(name, 0.5, 1.0)

    def test_censoring_requirements(self):
        with pytest.raises(ValueError):
            LearnerSpec("R", "CoxLasso", "Lasso", None, 0.5, 1.0)
        with pytest.raises(ValueError):
            LearnerSpec("S", "CoxLasso", None, "KaplanMeier", 0.5, 1.0)
        with pytest.raises(ValueError):
            LearnerSpec("T", "CoxLasso", None, None, 1.0, 1.0)


class TestSLearner:
    def cox_model(self, b, d=2, h=0.7):
        coef = np.zeros(2 * d + 1)
        coef[d] = b
        return CoxLassoModel(coef, HazardCurve(np.array([0.5]), np.array([h])), 0.1,
                             np.zeros(2 * d + 1), np.ones(2 * d + 1), np.ones(2 * d + 1))

    def test_treatment_only_coefficient(self):
        b, h = 0.8, 0.7
        model = SCoxCate(self.cox_model(b, h=h), np.zeros(2), np.ones(2), 1.0)
        X = np.random.default_rng(0).normal(size=(10, 2))
        expected = math.exp(-h * math.exp(b / 2)) - math.exp(-h * math.exp(-b / 2))
        np.testing.assert_allclose(model.predict(X), expected, atol=1e-15)

    def test_null_model(self):
        model = SCoxCate(self.cox_model(0.0), np.zeros(2), np.ones(2), 1.0)
        np.testing.assert_array_equal(model.predict(np.ones((4, 2))), 0.0)

    def test_forest_without_splits_is_zero(self):
        ds = uncensored(200, 1, effect=1.0)
        model = fit_s_learner(ds, 1.0, "SurvivalForest", settings=DEPTH0)
        np.testing.assert_array_equal(model.predict(ds.covariates[:20]), 0.0)

    def test_lasso_detects_treatment_effect(self):
        ds = uncensored(800, 2, effect=1.0)
        tau = fit_s_learner(ds, 0.7, "CoxLasso", settings=FAST).predict(ds.covariates[:50])
        # treated hazard is e times the control hazard
        truth = math.exp(-0.7 * math.e) - math.exp(-0.7)
        assert np.median(tau) == pytest.approx(truth, abs=0.05)


class TestTLearner:
    def test_copied_arms_give_zero(self):
        base = uncensored(150, 3)
        X = np.vstack([base.covariates, base.covariates])
        W = np.r_[np.zeros(150, dtype=int), np.ones(150, dtype=int)]
        ds = SurvivalDataset(X, W, np.r_[base.followup, base.followup], np.r_[base.event, base.event])
        model = fit_t_learner(ds, 0.8, "SurvivalForest", settings=DEPTH0)
        np.testing.assert_array_equal(model.predict(X[:30]), 0.0)

    def test_forced_risks(self):
        model = TCate(ConstantRisk(0.7), ConstantRisk(0.4))
        np.testing.assert_allclose(model.predict(np.zeros((5, 3))), 0.3, atol=1e-15)

    def test_arm_without_events(self):
        ds = uncensored(100, 4)
        event = np.where(ds.treatment == 1, 0, 1)
        ds = SurvivalDataset(ds.covariates, ds.treatment, ds.followup, event)
        with pytest.raises(ValueError):
            fit_t_learner(ds, 0.5, "CoxLasso", settings=FAST)

    def test_empty_arm(self):
        ds = uncensored(50, 5)
        ds = SurvivalDataset(ds.covariates, np.zeros(50, dtype=int), ds.followup, ds.event)
        with pytest.raises(ValueError):
            fit_cate(parse_estimator("TL*", 0.5, 1.0), ds)

    @pytest.mark.slow
    def test_base_dgp_beats_constant(self):
        spec = get_dgp("complexity/linR1-linTau1")
        train, test = sample(spec, n=5000, seed=1), sample(spec, n=5000, seed=2)
        model = fit_cate(parse_estimator("TL*", spec.e, spec.t0), train.dataset, seed=3)
        assert rrmse(model.predict(test.dataset.covariates), test.true_cate) < 1.0

    @pytest.mark.slow
    def test_null_within_permutation_bound(self):
        ds = uncensored(600, 6)
        Xq = np.random.default_rng(7).normal(size=(200, 3))

        def median_abs(data, seed):
            return np.median(np.abs(fit_t_learner(data, 0.7, "CoxLasso", seed=seed).predict(Xq)))

        observed = median_abs(ds, 0)
        rng = np.random.default_rng(8)
        null = [median_abs(SurvivalDataset(ds.covariates, rng.permutation(ds.treatment), ds.followup,
                                           ds.event), 0) for _ in range(19)]
        assert observed <= max(null)


class TestMLearner:
    def test_scores(self):
        ds = SurvivalDataset(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, 2.0, 0.5, 0.5], [1, 1, 1, 1])
        ipcw = km_ipcw(ds, 1.0, n_folds=2)
        scores = compute_m_scores(ds, 1.0, 0.5, ipcw)
        np.testing.assert_array_equal(scores.values, [2.0, -2.0, 0.0, 0.0])
        assert scores.kind == "M"

    def test_null_scores_and_flat_lasso(self):
        ds = uncensored(2000, 9)
        ipcw = km_ipcw(ds, 0.7)
        scores = compute_m_scores(ds, 0.7, 0.5, ipcw)
        se = scores.values.std(ddof=1) / math.sqrt(scores.values.size)
        assert abs(scores.values.mean()) <= 2 * se
        tau = fit_m_learner(ds, 0.7, "Lasso", 0.5, seed=1, settings=FAST).predict(
            np.random.default_rng(10).normal(size=(500, 3)))
        assert tau.std() <= 0.02

    def test_depth_zero_forest_is_weighted_mean(self):
        spec, sim = small_sim(n=800, seed=11)
        ds = sim.dataset
        model = fit_m_learner(ds, spec.t0, "Forest", 0.5, seed=2, settings=DEPTH0)
        ipcw = km_ipcw(ds, spec.t0, 10, _child_seed(2, _CENS))
        scores = compute_m_scores(ds, spec.t0, 0.5, ipcw)
        expected = np.sum(scores.weights * scores.values) / np.sum(scores.weights)
        np.testing.assert_allclose(model.predict(ds.covariates[:5]), expected, atol=1e-12)

    @pytest.mark.slow
    def test_ipcw_scores_unbiased_for_ate(self):
        spec = get_dgp("complexity/linR1-linTau1")
        Xmc = np.random.default_rng(12).normal(size=(400_000, 25))
        ate = float(np.mean(true_cate(spec, Xmc)))
        ds = sample(spec, n=5000, seed=13).dataset
        ipcw = km_ipcw(ds, spec.t0)
        scores = compute_m_scores(ds, spec.t0, spec.e, ipcw)
        contrib = np.zeros(ds.n)
        contrib[scores.index] = scores.weights * scores.values
        se = contrib.std(ddof=1) / math.sqrt(ds.n)
        assert abs(contrib.mean() - ate) <= 2 * se

    def test_censoring_errors_propagate(self):
        ds = SurvivalDataset(np.zeros((4, 1)), [1, 0, 1, 0], [0.2, 0.3, 0.4, 0.5], [0, 0, 0, 0])
        with pytest.raises(ValueError):
            fit_m_learner(ds, 1.0, "Lasso", 0.5, settings=LearnerSettings(n_folds=2))


class TestXLearner:
    def test_combination_weights(self):
        X = np.random.default_rng(14).normal(size=(6, 2))
        t1, t0 = linear_cate(0.2, [0.1, 0.0]), linear_cate(-0.1, [0.0, 0.3])
        a, b = t1.predict(X), t0.predict(X)
        np.testing.assert_allclose(XCate(t1, t0, 0.5).predict(X), (a + b) / 2, atol=1e-15)
        np.testing.assert_allclose(XCate(t1, t0, 0.08).predict(X), 0.92 * a + 0.08 * b, atol=1e-15)

    def test_oracle_imputation_targets_effect_on_treated(self):
        spec = DgpSpec(censoring=Censoring(kappa=1e9), t0=1.2)
        sim = sample(spec, n=40_000, seed=15)
        ds = sim.dataset
        treated = ds.treatment == 1
        X1 = ds.covariates[treated]
        response = (ds.followup[treated] > spec.t0) - true_mu(spec, X1, 0)
        att = true_cate(spec, X1).mean()
        se = response.std(ddof=1) / math.sqrt(response.size)
        assert abs(response.mean() - att) <= 2 * se

    def test_arm_symmetry(self):
        spec, sim = small_sim(n=600, seed=16)
        ds = sim.dataset
        flipped = SurvivalDataset(ds.covariates, 1 - ds.treatment, ds.followup, ds.event)
        # flipping arms swaps the roles of the two imputation regressions
        a = fit_cate(parse_estimator("XFL", 0.5, spec.t0), ds, seed=3, settings=DEPTH0)
        b = fit_cate(parse_estimator("XFL", 0.5, spec.t0), flipped, seed=3, settings=DEPTH0)
        Xq = ds.covariates[:40]
        np.testing.assert_allclose(a.predict(Xq), -b.predict(Xq), atol=0.05)


class TestRLearner:
    def test_pseudo_outcome_plug_in(self):
        ds = SurvivalDataset(np.zeros((2, 1)), [1, 0], [2.0, 2.0], [1, 1])
        ipcw = IpcwResult(np.array([0, 1]), np.array([1.5, 2.0]), np.array([1, 1], dtype=np.int8))
        nuis = NuisanceEstimates(np.full(2, 0.5), np.full(2, 0.5), np.full(2, 0.5))
        pseudo = r_pseudo_outcomes(ds, 0.5, nuis, ipcw)
        np.testing.assert_allclose(pseudo.values, [1.0, -1.0])
        np.testing.assert_allclose(pseudo.weights, [1.5 * 0.25, 2.0 * 0.25])

    def test_weight_identity(self):
        spec, sim = small_sim(n=400, seed=17)
        ds = sim.dataset
        ipcw = km_ipcw(ds, spec.t0)
        m = np.random.default_rng(0).uniform(size=ds.n)
        pseudo = r_pseudo_outcomes(ds, 0.3, NuisanceEstimates(m, m, m), ipcw)
        W = ds.treatment[pseudo.index]
        expected = np.where(W == 1, ipcw.weights * 0.7 ** 2, ipcw.weights * 0.3 ** 2)
        np.testing.assert_allclose(pseudo.weights, expected, rtol=1e-14)

    @pytest.mark.parametrize("cate", ["Lasso", "Forest"])
    def test_zero_nuisance_matches_m_learner(self, cate):
        spec, sim = small_sim(n=600, seed=18)
        ds = sim.dataset
        zero = NuisanceEstimates(np.zeros(ds.n), np.zeros(ds.n), np.zeros(ds.n))
        r = fit_r_learner(ds, spec.t0, "CoxLasso", cate, 0.5, seed=4, settings=FAST, nuisance=zero)
        m = fit_m_learner(ds, spec.t0, cate, 0.5, seed=4, settings=FAST)
        Xq = sample(spec, n=100, seed=19).dataset.covariates
        np.testing.assert_allclose(r.predict(Xq), m.predict(Xq), atol=1e-8)

    def test_nuisance_convex_combination(self):
        spec, sim = small_sim(n=400, seed=20)
        nuis = compute_r_nuisance(sim.dataset, spec.t0, "SurvivalForest", 0.0, seed=1, settings=FAST)
        np.testing.assert_array_equal(nuis.m_hat, nuis.mu0_oob)
        for v in (nuis.mu1_oob, nuis.mu0_oob):
            assert np.all((v >= 0) & (v <= 1))

    def test_constant_hazard_nuisance_flat(self):
        ds = uncensored(2000, 21)
        nuis = compute_r_nuisance(ds, 0.7, "SurvivalForest", 0.5, seed=2,
                                  settings=LearnerSettings(forest=reference_forest_params(200)))
        assert nuis.m_hat.std() <= 0.03

    def test_lasso_nuisance_is_cross_fitted(self):
        spec, sim = small_sim(n=300, seed=22)
        a = compute_r_nuisance(sim.dataset, spec.t0, "CoxLasso", 0.5, seed=3)
        b = compute_r_nuisance(sim.dataset, spec.t0, "CoxLasso", 0.5, seed=3)
        np.testing.assert_array_equal(a.m_hat, b.m_hat)
        np.testing.assert_allclose(a.m_hat, 0.5 * a.mu1_oob + 0.5 * a.mu0_oob, atol=1e-15)

    def test_constant_ate_difference_in_means(self):
        U = np.array([2.0, 0.5, 3.0, 2.5, 0.2, 0.9, 4.0, 0.4, 1.5, 0.1])
        W = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0])
        ds = SurvivalDataset(np.zeros((10, 1)), W, U, np.ones(10, dtype=int))
        Y = (U > 1.0).astype(float)
        m = np.full(10, Y.mean())
        est = r_learner_constant_ate(ds, 1.0, "CoxLasso", 0.5, nuisance=NuisanceEstimates(m, m, m))
        assert est == pytest.approx(Y[W == 1].mean() - Y[W == 0].mean(), abs=1e-12)

    def test_constant_ate_identical_outcomes(self):
        ds = SurvivalDataset(np.zeros((10, 1)), np.arange(10) % 2, np.full(10, 3.0), np.ones(10, dtype=int))
        m = np.ones(10)
        assert r_learner_constant_ate(ds, 1.0, "CoxLasso", 0.5, nuisance=NuisanceEstimates(m, m, m)) == 0.0

    def test_constant_ate_null(self):
        ds = uncensored(3000, 23)
        est = r_learner_constant_ate(ds, 0.7, "CoxLasso", 0.5, seed=1, settings=FAST)
        nuis = compute_r_nuisance(ds, 0.7, "CoxLasso", 0.5, seed=1, settings=FAST)
        rw = ds.treatment - 0.5
        ry = (ds.followup > 0.7) - nuis.m_hat
        se = math.sqrt(np.sum(rw ** 2 * (ry - est * rw) ** 2)) / np.sum(rw ** 2)
        assert abs(est) <= 2 * se


class TestDispatcher:
    @pytest.mark.parametrize("name", ["SL*", "TF*", "XLL", "RFL-SF", "M*F", "CPH"])
    def test_deterministic(self, name):
        spec, sim = small_sim(n=500, seed=24)
        learner = parse_estimator(name, spec.e, spec.t0)
        Xq = sim.dataset.covariates[:30]
        a = fit_cate(learner, sim.dataset, seed=5, settings=FAST).predict(Xq)
        b = fit_cate(learner, sim.dataset, seed=5, settings=FAST).predict(Xq)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.isfinite(a)) and np.all(np.abs(a) <= 1)

    def test_clamping_is_counted(self):
        model = RegressionCate(linear_cate(0.0, [3.0]))
        pred, clamped = model.predict_with_clamps(np.array([[0.1], [1.0], [-2.0]]))
        np.testing.assert_allclose(pred, [0.3, 1.0, -1.0])
        assert clamped == 2

    def test_cph_is_unpenalized(self):
        spec, sim = small_sim(n=400, seed=25)
        model = fit_cph_baseline(sim.dataset, spec.t0)
        assert model.model.lam == 0.0

    @pytest.mark.slow
    def test_rll_base_dgp_beats_constant(self):
        spec = get_dgp("complexity/linR1-linTau1")
        train, test = sample(spec, n=5000, seed=26), sample(spec, n=5000, seed=27)
        model = fit_cate(parse_estimator("RLL", spec.e, spec.t0), train.dataset, seed=1)
        assert rrmse(model.predict(test.dataset.covariates), test.true_cate) < 1.0
