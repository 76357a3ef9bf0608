import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survcate.linear import (
    CoxLassoModel,
    HazardCurve,
    cv_cox_lasso,
    cv_weighted_lasso,
    fit_cox_lasso,
    fit_weighted_lasso,
    predict_cox_survival,
)
from survcate.survival import make_folds, nelson_aalen_survival


def breslow_loglik_parts(X, U, D, beta):
    """Breslow log partial likelihood, gradient and Hessian by direct summation."""
    eta = X @ beta
    r = np.exp(eta)
    ll = 0.0
    g = np.zeros(X.shape[1])
    H = np.zeros((X.shape[1], X.shape[1]))
    for t in np.unique(U[D == 1]):
        dead = (U == t) & (D == 1)
        risk = U >= t
        s0 = r[risk].sum()
        s1 = r[risk] @ X[risk]
        s2 = (X[risk] * r[risk, None]).T @ X[risk]
        m = dead.sum()
        ll += eta[dead].sum() - m * np.log(s0)
        g += X[dead].sum(axis=0) - m * s1 / s0
        H -= m * (s2 / s0 - np.outer(s1, s1) / s0**2)
    return ll, g, H


def newton_cox(X, U, D, iters=100):
    beta = np.zeros(X.shape[1])
    for _ in range(iters):
        _, g, H = breslow_loglik_parts(X, U, D, beta)
        step = np.linalg.solve(H, g)
        beta = beta - step
        if np.max(np.abs(step)) < 1e-13:
            break
    return beta


def cox_data(n, d, seed, effect=None, censor=True):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    lp = X @ (np.zeros(d) if effect is None else effect)
    T = rng.exponential(size=n) * np.exp(-lp)
    C = rng.exponential(scale=2.0, size=n) if censor else np.full(n, np.inf)
    return X, np.minimum(T, C), (T <= C).astype(int)


def std_gradient(model, X, U, D):
    """Gradient of -loglik/n with respect to the standardized coefficients."""
    _, g, _ = breslow_loglik_parts(X, U, D, model.coefficients)
    return -g / model.scale / X.shape[0]


class TestCoxLasso:
    def test_unpenalized_matches_newton(self):
        X, U, D = cox_data(20, 2, 0, effect=np.array([0.8, -0.5]))
        model = fit_cox_lasso(X, U, D, 0.0)
        np.testing.assert_allclose(model.coefficients, newton_cox(X, U, D), atol=1e-5)

    def test_unpenalized_with_ties_matches_newton(self):
        X, U, D = cox_data(60, 3, 1, effect=np.array([0.5, 0.0, -0.3]))
        U = np.round(U, 1)
        model = fit_cox_lasso(X, U, D, 0.0)
        np.testing.assert_allclose(model.coefficients, newton_cox(X, U, D), atol=1e-5)

    def test_lambda_max_zeroes_everything(self):
        X, U, D = cox_data(100, 4, 2, effect=np.array([1.0, 0.5, 0, 0]))
        scale = X.std(axis=0)
        Xs = (X - X.mean(axis=0)) / scale
        _, g, _ = breslow_loglik_parts(Xs, U, D, np.zeros(4))
        lam_max = np.max(np.abs(g)) / X.shape[0]
        assert np.all(fit_cox_lasso(X, U, D, lam_max * 1.0001).coefficients == 0.0)
        assert np.any(fit_cox_lasso(X, U, D, lam_max * 0.9).coefficients != 0.0)

    def test_unpenalized_column_survives_huge_lambda(self):
        X, U, D = cox_data(80, 3, 3, effect=np.array([1.0, 0.5, 0.0]))
        model = fit_cox_lasso(X, U, D, 1e6, penalty_factors=[0.0, 1.0, 1.0])
        assert model.coefficients[0] != 0.0
        assert np.all(model.coefficients[1:] == 0.0)
        expected = newton_cox(X[:, :1], U, D)
        assert model.coefficients[0] == pytest.approx(expected[0], abs=1e-5)

    def test_kkt_conditions(self):
        X, U, D = cox_data(150, 6, 4, effect=np.array([1.0, -0.7, 0.3, 0, 0, 0]))
        lam = 0.03
        model = fit_cox_lasso(X, U, D, lam)
        g = std_gradient(model, X, U, D)
        zero = model.coefficients == 0
        assert np.all(np.abs(g[zero]) <= lam + 1e-6)
        nz = ~zero
        np.testing.assert_allclose(g[nz], -lam * np.sign(model.coefficients[nz]), atol=1e-5)

    def test_objective_trace_nonincreasing(self):
        X, U, D = cox_data(200, 5, 5, effect=np.array([1.0, -1.0, 0.5, 0, 0]))
        for lam in (0.0, 0.01, 0.05):
            trace = np.full(1001, np.nan)
            fit_cox_lasso(X, U, D, lam, trace=trace)
            t = trace[~np.isnan(trace)]
            assert t.size >= 2
            assert np.all(np.diff(t) <= 1e-14 * np.abs(t[:-1]).max())

    def test_constant_column_is_inactive(self):
        X, U, D = cox_data(50, 2, 6, effect=np.array([1.0, 0.0]))
        X = np.column_stack([X, np.full(50, 3.0)])
        model = fit_cox_lasso(X, U, D, 0.0)
        assert model.coefficients[2] == 0.0

    def test_errors(self):
        X, U, D = cox_data(30, 2, 7)
        with pytest.raises(ValueError):
            fit_cox_lasso(X, U, np.zeros(30), 0.1)
        with pytest.raises(ValueError):
            fit_cox_lasso(X, U, D, -1.0)
        with pytest.raises(ValueError):
            fit_cox_lasso(X, U, D, 0.1, penalty_factors=[1.0])

    def test_zero_coefficients_give_breslow_nelson_aalen(self):
        X, U, D = cox_data(120, 3, 8)
        model = fit_cox_lasso(X, U, D, 1e3)
        na = nelson_aalen_survival(U, D, np.ones(U.size))
        for t0 in np.quantile(U, [0.2, 0.5, 0.8]):
            expected = na(t0)
            preds = predict_cox_survival(model, X[:5], t0)
            np.testing.assert_allclose(preds, expected, atol=1e-12)


class TestCoxPrediction:
    X, U, D = cox_data(100, 3, 9, effect=np.array([1.0, 0.0, -0.5]))
    model = fit_cox_lasso(X, U, D, 0.01)

    def test_time_zero_is_one(self):
        assert predict_cox_survival(self.model, self.X[0], 0.0) == 1.0

    def test_monotone_in_t0(self):
        ts = np.linspace(0, self.U.max(), 40)
        for x in self.X[:5]:
            s = [predict_cox_survival(self.model, x, t) for t in ts]
            assert np.all(np.diff(s) <= 0)

    def test_doubling_hazard_squares_survival(self):
        h = HazardCurve(np.array([1.0, 2.0]), np.array([0.2, 0.5]))
        h2 = HazardCurve(h.knots, 2 * h.values)
        kw = dict(coefficients=np.zeros(2), lam=0.0, center=np.zeros(2), scale=np.ones(2),
                  penalty_factors=np.ones(2))
        a = predict_cox_survival(CoxLassoModel(baseline_cumhaz=h, **kw), np.zeros(2), 1.5)
        b = predict_cox_survival(CoxLassoModel(baseline_cumhaz=h2, **kw), np.zeros(2), 1.5)
        assert b == pytest.approx(a**2, rel=1e-14)

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            predict_cox_survival(self.model, np.array([np.nan, 0.0, 0.0]), 1.0)

    def test_baseline_hazard_shape(self):
        h = self.model.baseline_cumhaz
        assert h(0.0) == 0.0
        assert np.all(np.diff(h.values) >= 0)


class TestCvCox:
    def test_deterministic(self):
        X, U, D = cox_data(200, 5, 10, effect=np.array([1.0, 0, 0, 0, 0]))
        f = make_folds(200, 10, 0)
        assert cv_cox_lasso(X, U, D, folds=f).lam == cv_cox_lasso(X, U, D, folds=f).lam

    @pytest.mark.slow
    def test_noise_covariates_are_sparse(self):
        sparse = 0
        for seed in range(20):
            X, U, D = cox_data(500, 10, 100 + seed)
            m = cv_cox_lasso(X, U, D, folds=make_folds(500, 10, seed))
            sparse += np.count_nonzero(m.coefficients) <= 5
        assert sparse >= 18

    @pytest.mark.slow
    def test_strong_covariate_selected(self):
        hits = 0
        for seed in range(20):
            X, U, D = cox_data(300, 10, 200 + seed, effect=np.r_[1.0, np.zeros(9)])
            m = cv_cox_lasso(X, U, D, folds=make_folds(300, 10, seed))
            hits += m.coefficients[0] != 0
        assert hits >= 19

    def test_eventless_fold_warns(self):
        X, U, D = cox_data(40, 2, 11, effect=np.array([1.0, 0.0]))
        f = make_folds(40, 4, 0)
        D = D.copy()
        D[f.members(0)] = 0
        D[f.members(1)[:1]] = 1
        with pytest.warns(RuntimeWarning, match="no events"):
            cv_cox_lasso(X, U, D, folds=f)

    def test_fold_size_mismatch(self):
        X, U, D = cox_data(40, 2, 12)
        with pytest.raises(ValueError):
            cv_cox_lasso(X, U, D, folds=make_folds(30, 5, 0))


def ls_oracle(X, y, w):
    A = np.column_stack([np.ones(len(y)), X])
    sol = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * y))
    return sol[0], sol[1:]


class TestWeightedLasso:
    def test_normal_equations_equal_weights(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(10, 2))
        y = 1.0 + X @ [2.0, -1.0] + 0.3 * rng.normal(size=10)
        m = fit_weighted_lasso(X, y, np.ones(10), 0.0)
        b0, b = ls_oracle(X, y, np.ones(10))
        assert m.intercept == pytest.approx(b0, abs=1e-8)
        np.testing.assert_allclose(m.coefficients, b, atol=1e-8)

    def test_normal_equations_unequal_weights(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 4))
        y = rng.normal(size=40)
        w = rng.uniform(0.1, 3.0, 40)
        m = fit_weighted_lasso(X, y, w, 0.0)
        b0, b = ls_oracle(X, y, w)
        assert m.intercept == pytest.approx(b0, abs=1e-8)
        np.testing.assert_allclose(m.coefficients, b, atol=1e-8)

    def test_huge_lambda_gives_weighted_mean(self):
        rng = np.random.default_rng(2)
        X, y, w = rng.normal(size=(30, 3)), rng.normal(size=30), rng.uniform(0, 2, 30)
        m = fit_weighted_lasso(X, y, w, 1e9)
        assert np.all(m.coefficients == 0)
        assert m.intercept == pytest.approx(np.average(y, weights=w), abs=1e-12)

    def test_duplicate_row_equals_double_weight(self):
        rng = np.random.default_rng(3)
        X, y = rng.normal(size=(25, 3)), rng.normal(size=25)
        w = np.ones(25)
        w2 = w.copy()
        w2[0] = 2.0
        a = fit_weighted_lasso(np.vstack([X, X[:1]]), np.r_[y, y[0]], np.ones(26), 0.05)
        b = fit_weighted_lasso(X, y, w2, 0.05)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-10)
        np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-10)

    def test_kkt(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(80, 6))
        y = X[:, 0] - 0.5 * X[:, 1] + rng.normal(size=80)
        w = rng.uniform(0.5, 2.0, 80)
        lam = 0.1
        m = fit_weighted_lasso(X, y, w, lam)
        v = w / w.sum()
        resid = y - m.predict(X)
        g = (v * resid) @ ((X - m.center) / m.scale)
        zero = m.coefficients == 0
        assert np.all(np.abs(g[zero]) <= lam + 1e-8)
        np.testing.assert_allclose(g[~zero], lam * np.sign(m.coefficients[~zero]), atol=1e-8)

    def test_zero_weights(self):
        with pytest.raises(ValueError):
            fit_weighted_lasso(np.zeros((3, 1)) + [[1], [2], [3]], [1.0, 2.0, 3.0], np.zeros(3), 0.1)

    @given(st.floats(-50, 50), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_shift_of_y_moves_only_intercept(self, c, seed):
        rng = np.random.default_rng(seed)
        X, y, w = rng.normal(size=(20, 3)), rng.normal(size=20), rng.uniform(0.1, 1, 20)
        a = fit_weighted_lasso(X, y, w, 0.05)
        b = fit_weighted_lasso(X, y + c, w, 0.05)
        assert b.intercept == pytest.approx(a.intercept + c, abs=1e-7)
        np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-7)

    def test_prediction_is_affine(self):
        rng = np.random.default_rng(5)
        X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
        m = fit_weighted_lasso(X, y, np.ones(30), 0.01)
        x1, x2 = rng.normal(size=2), rng.normal(size=2)
        mid = m.predict(((x1 + x2) / 2)[None])[0]
        assert mid == pytest.approx((m.predict(x1[None])[0] + m.predict(x2[None])[0]) / 2)


class TestCvWeightedLasso:
    def test_noise_is_sparse(self):
        sparse = 0
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            X, y, w = rng.normal(size=(200, 10)), rng.normal(size=200), rng.uniform(0.5, 2, 200)
            m = cv_weighted_lasso(X, y, w, make_folds(200, 10, seed))
            sparse += np.count_nonzero(m.coefficients) <= 5
            assert abs(m.intercept - np.average(y, weights=w)) < 0.3
        assert sparse >= 18

    def test_exact_linear_signal(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(100, 5))
        m = cv_weighted_lasso(X, 2 * X[:, 0], np.ones(100), make_folds(100, 10, 0))
        assert abs(m.coefficients[0] - 2.0) < 0.05

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        X, y = rng.normal(size=(60, 4)), rng.normal(size=60)
        f = make_folds(60, 5, 1)
        a = cv_weighted_lasso(X, y, np.ones(60), f)
        b = cv_weighted_lasso(X, y, np.ones(60), f)
        assert a.lam == b.lam
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_zero_weight_fold_warns(self):
        rng = np.random.default_rng(8)
        X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
        f = make_folds(40, 4, 0)
        w = np.ones(40)
        w[f.members(2)] = 0.0
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cv_weighted_lasso(X, y, w, f)
        assert any("zero total weight" in str(c.message) for c in caught)
