import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from pathfair.data import Dataset
from pathfair.exceptions import DataError, NotConverged, RankDeficient, UnknownColumn
from pathfair.glm import (
    FeatureSpec, GlmModel, NuisanceSet, fit_binomial, fit_gaussian, fit_nuisances, fold_ids,
    penalty_grid, select_penalty_cv,
)


def logistic_data(n=400, seed=0, coef=(0.3, -1.0, 0.7)):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, n))
    eta = coef[0] + coef[1] * x1 + coef[2] * x2
    s = (rng.random(n) < expit(eta)).astype(float)
    y = 1.0 + 2.0 * x1 - x2 + rng.standard_normal(n)
    return Dataset({"x1": x1, "x2": x2, "s": s, "y": y})


def split_l1_objective(X, y, lam, pf, family):
    """Smooth reformulation beta = u - v, u, v >= 0, solved by L-BFGS-B."""
    n, k = X.shape

    def f(z):
        b = z[:k] - z[k:]
        eta = X @ b
        if family == "gaussian":
            r = y - eta
            loss = r @ r / (2 * n)
            g = -X.T @ r / n
        else:
            loss = np.sum(np.logaddexp(0, eta) - y * eta) / n
            g = X.T @ (expit(eta) - y) / n
        val = loss + lam * np.sum(pf * (z[:k] + z[k:]))
        grad = np.concatenate([g + lam * pf, -g + lam * pf])
        return val, grad

    res = minimize(f, np.zeros(2 * k), jac=True, method="L-BFGS-B",
                   bounds=[(0, None)] * (2 * k), options={"ftol": 1e-15, "gtol": 1e-11,
                                                        "maxiter": 20000})
    return res.x[:k] - res.x[k:]


class TestFeatureSpec:
    def test_design_with_product(self):
        d = Dataset({"a": [1.0, 2.0], "b": [3.0, 4.0]}, ["a", "b"])
        X = FeatureSpec(["1", "a", "a:b"]).design(d)
        np.testing.assert_array_equal(X, [[1, 1, 3], [1, 2, 8]])

    def test_override(self):
        d = Dataset({"a": [1.0, 2.0], "s": [0.0, 1.0]}, ["a"])
        X = FeatureSpec(["s", "a:s"]).design(d, {"s": 1})
        np.testing.assert_array_equal(X, [[1, 1], [1, 2]])

    def test_unknown_column(self):
        d = Dataset({"a": [1.0]}, ["a"])
        with pytest.raises(UnknownColumn):
            FeatureSpec(["1", "zz"]).design(d)

    def test_duplicates_rejected(self):
        with pytest.raises(DataError):
            FeatureSpec(["1", "a", "a"])


class TestGaussian:
    def test_matches_normal_equations(self):
        d = logistic_data()
        m = fit_gaussian(d, "y", ["1", "x1", "x2"])
        X = np.column_stack([np.ones(d.n), d["x1"], d["x2"]])
        beta = np.linalg.solve(X.T @ X, X.T @ d["y"])
        np.testing.assert_allclose(m.coef, beta, rtol=1e-10)

    def test_rank_deficient(self):
        d = Dataset({"a": [1.0, 2.0, 3.0], "b": [2.0, 4.0, 6.0], "y": [1.0, 0.0, 1.0]})
        with pytest.raises(RankDeficient):
            fit_gaussian(d, "y", ["a", "b"])

    def test_lasso_matches_split_formulation(self):
        d = logistic_data(n=300, seed=3)
        spec = ["1", "x1", "x2"]
        m = fit_gaussian(d, "y", spec, l1_penalty=0.3, tol=1e-12)
        X = FeatureSpec(spec).design(d)
        pf = X.std(axis=0)
        pf[0] = 0.0
        ref = split_l1_objective(X, d["y"], 0.3, pf, "gaussian")
        np.testing.assert_allclose(m.coef, ref, atol=1e-5)

    def test_huge_penalty_gives_intercept_only(self):
        d = logistic_data()
        m = fit_gaussian(d, "y", ["1", "x1", "x2"], l1_penalty=1e3)
        np.testing.assert_allclose(m.coef, [d["y"].mean(), 0, 0], atol=1e-10)


class TestBinomial:
    def test_mle_matches_scipy(self):
        d = logistic_data(n=500, seed=1)
        m = fit_binomial(d, "s", ["1", "x1", "x2"])
        X = FeatureSpec(["1", "x1", "x2"]).design(d)
        ref = split_l1_objective(X, d["s"], 0.0, np.zeros(3), "binomial")
        np.testing.assert_allclose(m.coef, ref, atol=1e-5)
        assert m.converged

    def test_deviance_non_increasing(self):
        d = logistic_data(n=300, seed=5)
        m = fit_binomial(d, "s", ["1", "x1", "x2"])
        assert np.all(np.diff(m.history) <= 1e-9)

    def test_lasso_matches_split_formulation(self):
        d = logistic_data(n=400, seed=2)
        spec = ["1", "x1", "x2"]
        m = fit_binomial(d, "s", spec, l1_penalty=0.05, tol=1e-10, cd_tol=1e-12)
        X = FeatureSpec(spec).design(d)
        pf = X.std(axis=0)
        pf[0] = 0.0
        ref = split_l1_objective(X, d["s"], 0.05, pf, "binomial")
        np.testing.assert_allclose(m.coef, ref, atol=1e-4)
        assert np.all(np.diff(m.history) <= 1e-12)

    def test_cd_solver_without_penalty_agrees_with_irls(self):
        d = logistic_data(n=300, seed=4)
        a = fit_binomial(d, "s", ["1", "x1", "x2"])
        b = fit_binomial(d, "s", ["1", "x1", "x2"], solver="cd", tol=1e-10, cd_tol=1e-12)
        np.testing.assert_allclose(a.coef, b.coef, atol=1e-6)

    def test_separation_does_not_converge(self):
        x = np.linspace(-1, 1, 40)
        d = Dataset({"x": x, "s": (x > 0).astype(float)})
        with pytest.raises(NotConverged) as info:
            fit_binomial(d, "s", ["1", "x"])
        assert info.value.model is not None
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            m = fit_binomial(d, "s", ["1", "x"], raise_nonconverged=False)
        assert not m.converged and w

    def test_non_binary_target(self):
        d = logistic_data()
        with pytest.raises(DataError):
            fit_binomial(d, "y", ["1", "x1"])

    def test_predict_clipped(self):
        m = GlmModel.fixed("binomial", ["1"], [50.0], "s", clip_eps=1e-6)
        d = Dataset({"s": [0.0, 1.0]})
        np.testing.assert_array_equal(m.predict(d), 1 - 1e-6)


class TestCrossValidation:
    def test_fold_ids_balanced_and_deterministic(self):
        a = fold_ids(103, 10, 7)
        np.testing.assert_array_equal(a, fold_ids(103, 10, 7))
        counts = np.bincount(a)
        assert counts.max() - counts.min() <= 1

    def test_grid_top_zeroes_everything(self):
        d = logistic_data(n=300)
        grid = penalty_grid(d, "y", ["1", "x1", "x2"])
        m = fit_gaussian(d, "y", ["1", "x1", "x2"], l1_penalty=grid[0] * 1.0001)
        np.testing.assert_allclose(m.coef[1:], 0.0, atol=1e-12)
        assert np.all(np.diff(grid) < 0)

    def test_selection_deterministic(self):
        d = logistic_data(n=300, seed=9)
        a = select_penalty_cv(d, "s", ["1", "x1", "x2"], folds=5, seed=1)
        b = select_penalty_cv(d, "s", ["1", "x1", "x2"], folds=5, seed=1)
        assert a == b
        assert a < penalty_grid(d, "s", ["1", "x1", "x2"])[0]


class TestNuisanceSet:
    def test_illegal_conditioning_rejected(self):
        g = lambda fam, t, tgt: GlmModel.fixed(fam, t, np.zeros(len(t)), tgt)  # noqa: E731
        ns = NuisanceSet(g("gaussian", ["1", "s"], "y"), g("binomial", ["1", "s"], "s"))
        with pytest.raises(DataError):
            ns.validate(["x"])

    def test_round_trip(self, misspec_dgp):
        d = misspec_dgp.generate(500, 0)
        ns = fit_nuisances(d, misspec_dgp.specs())
        back = NuisanceSet.from_dict(ns.to_dict())
        for k in ("psi", "pi", "f_m", "f_l"):
            np.testing.assert_array_equal(getattr(back, k).coef, getattr(ns, k).coef)
            np.testing.assert_array_equal(getattr(back, k).predict(d), getattr(ns, k).predict(d))

    def test_cv_penalties(self, misspec_dgp):
        d = misspec_dgp.generate(400, 1)
        ns = fit_nuisances(d, misspec_dgp.specs(), l1="cv", cv_folds=3, seed=0)
        assert all(getattr(ns, k).l1_penalty >= 0 for k in ("psi", "pi", "f_m", "f_l"))
