import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enumerate_discrete
from pathfair.adjust import (
    FairPredictor, LambdaSearchConfig, NoSignChange, adjust_log_odds, adjust_mse,
    constraint_table, fit_adjust, log_odds_bounds, mse_gap, shrink, solve_lambda_xent,
    xent_path_point,
)
from pathfair.exceptions import DegenerateVariance, EmptyFeasibleInterval, UnsupportedScenario
from pathfair.glm import fit_nuisances
from pathfair.pse import ConstraintEstimate, GradientField, estimate, gradient_field
from pathfair.sim import Dgp, DgpSpec


@given(st.floats(-10, 10), st.floats(0, 5))
def test_shrink(theta, bound):
    t = shrink(theta, bound)
    assert abs(t) <= abs(theta)
    if abs(theta) <= bound:
        assert t == 0.0
    else:
        assert abs(theta - t) == pytest.approx(bound)
        assert np.sign(t) == np.sign(theta)


def test_shrink_rejects_negative_bound():
    with pytest.raises(ValueError):
        shrink(1.0, -0.1)


@settings(max_examples=500)
@given(st.floats(0, 1), st.floats(-1e3, 1e3), st.floats(-1e2, 1e2))
def test_path_point_solves_stationarity(psi, d, lam):
    q = xent_path_point(psi, d, lam)
    assert 0.0 <= q <= 1.0
    a = lam * d
    resid = a * q * q - (1 + a) * q + psi
    # residual relative to the size of the quadratic's coefficients
    assert abs(resid) <= 1e-9 * max(1.0, abs(a))


def test_path_point_limits():
    assert xent_path_point(0.3, 2.0, 0.0) == 0.3
    assert xent_path_point(0.0, 5.0, 1.0) == 0.0
    assert xent_path_point(1.0, 5.0, -1.0) == 1.0
    # large positive lam * d pushes towards 0, large negative towards 1
    assert xent_path_point(0.5, 1.0, 1e6) < 1e-5
    assert xent_path_point(0.5, 1.0, -1e6) > 1 - 1e-5


def test_path_point_known_root():
    # lam d = -0.2, psi = 0.5: root of -0.2 q^2 - 0.8 q + 0.5 in [0, 1]
    q = xent_path_point(0.5, 1.0, -0.2)
    assert q == pytest.approx((-0.8 + np.sqrt(0.64 + 0.4)) / 0.4, rel=1e-14)


def test_path_point_rejects_bad_psi():
    from pathfair.exceptions import NegativeDiscriminant
    with pytest.raises(NegativeDiscriminant):
        xent_path_point(1.5, 1.0, 1.0)


@pytest.fixture(scope="module")
def fitted():
    dgp = Dgp(DgpSpec("misspec"))
    d = dgp.generate(1500, 11)
    return dgp, d, fit_nuisances(d, dgp.specs())


class TestMse:
    def test_plugin_nulls_own_constraint(self, fitted):
        dgp, d, nuis = fitted
        fp = fit_adjust(d, nuis, dgp.scenario, "mse", "plugin")
        est = estimate(d, nuis, dgp.scenario, "plugin", predictor=fp.predict)
        assert abs(est.value) < 1e-10

    @pytest.mark.parametrize("bound", [0.05, 0.3])
    def test_bound_is_attained(self, fitted, bound):
        dgp, d, nuis = fitted
        fp = fit_adjust(d, nuis, dgp.scenario, "mse", "plugin", bound)
        est = estimate(d, nuis, dgp.scenario, "plugin", predictor=fp.predict)
        assert est.value == pytest.approx(np.sign(fp.theta) * bound, abs=1e-10)

    def test_zero_theta_returns_base(self, fitted):
        dgp, d, nuis = fitted
        est = ConstraintEstimate(0.0, "plugin", np.zeros(d.n))
        fp = adjust_mse(nuis, dgp.scenario, est, gradient_field(d, nuis, dgp.scenario))
        np.testing.assert_array_equal(fp.predict(d), nuis.psi.predict(d))

    def test_gap(self):
        est = ConstraintEstimate(0.5, "plugin", np.zeros(3))
        f = GradientField(np.zeros(3), 2.0, "rho1")
        assert mse_gap(est, f) == 0.125

    def test_degenerate_variance(self, fitted):
        dgp, d, nuis = fitted
        est = ConstraintEstimate(0.5, "plugin", np.zeros(3))
        with pytest.raises(DegenerateVariance):
            adjust_mse(nuis, dgp.scenario, est, GradientField(np.zeros(3), 0.0, "rho1"))

    def test_round_trip(self, fitted, tmp_path):
        dgp, d, nuis = fitted
        fp = fit_adjust(d, nuis, dgp.scenario, "mse", "aipw", 0.1)
        fp.save(tmp_path / "p.json")
        back = FairPredictor.load(tmp_path / "p.json")
        np.testing.assert_array_equal(back.predict(d), fp.predict(d))
        assert back.theta_method == "aipw"


@pytest.fixture(scope="module")
def binary():
    dgp = Dgp(DgpSpec("discrete"))
    d = dgp.generate(3000, 5)
    return dgp, d, fit_nuisances(d, dgp.specs(), outcome_family="binomial")


class TestCrossEntropy:
    @pytest.mark.parametrize("method", ["plugin", "ipw", "ipw-alt", "aipw"])
    def test_mean_difference_target_reached(self, binary, method):
        dgp, d, nuis = binary
        fp = solve_lambda_xent(d, nuis, dgp.scenario, method)
        assert fp.achieved < 1e-6
        tab = constraint_table(d, nuis, dgp.scenario, method)
        vals = xent_path_point(tab.psi, tab.D, fp.lam)
        assert abs(tab.theta(vals)) < 1e-6
        pred = fp.predict(d)
        assert np.all((pred >= 0) & (pred <= 1))

    def test_bound_inside_interval_keeps_base(self, binary):
        dgp, d, nuis = binary
        fp = solve_lambda_xent(d, nuis, dgp.scenario, "plugin", bound=10.0)
        assert fp.lam == 0.0
        np.testing.assert_array_equal(fp.predict(d), nuis.psi.predict(d))

    def test_warns_without_sign_change(self, binary):
        dgp, d, nuis = binary
        cfg = LambdaSearchConfig(grid_size=11, bracket=(-1e-6, 1e-6))
        with pytest.warns(NoSignChange):
            solve_lambda_xent(d, nuis, dgp.scenario, "plugin", cfg)

    def test_needs_binary_outcome(self, fitted):
        dgp, d, nuis = fitted
        with pytest.raises(UnsupportedScenario):
            solve_lambda_xent(d, nuis, dgp.scenario)


class TestLogOdds:
    def test_bounds_keep_predictions_in_unit_interval(self):
        rng = np.random.default_rng(0)
        psi = rng.uniform(0.05, 0.95, (8, 100))
        D = rng.normal(0, 3, (8, 100))
        lo, hi = log_odds_bounds(psi, D, np.repeat([0, 1], 4))
        for lam in np.linspace(lo, hi, 21):
            v = psi - lam * D
            assert v.min() >= -1e-12 and v.max() <= 1 + 1e-12

    def test_interval_contains_zero(self):
        psi = np.array([[0.0], [1.0]])
        D = np.array([[-1.0], [-1.0]])
        assert log_odds_bounds(psi, D, np.array([0, 1])) == (0.0, 0.0)

    def test_empty_interval(self):
        # only out-of-range regressions can make the interval empty
        psi = np.array([[1.2], [-0.2]])
        D = np.array([[1.0], [1.0]])
        with pytest.raises(EmptyFeasibleInterval) as info:
            log_odds_bounds(psi, D, np.array([0, 1]))
        assert info.value.rows == [0]

    def test_target_and_interval(self, binary):
        dgp, d, nuis = binary
        fp = adjust_log_odds(d, nuis, dgp.scenario)
        lo, hi = fp.eps_interval
        assert lo <= fp.lam <= hi
        assert fp.achieved < 1e-3
        pred = fp.predict(d)
        assert np.all((pred >= 0) & (pred <= 1))

    def test_method_restriction(self, binary):
        dgp, d, nuis = binary
        with pytest.raises(UnsupportedScenario):
            adjust_log_odds(d, nuis, dgp.scenario, theta_method="aipw")


def test_fit_adjust_rejects_unknown_risk(fitted):
    dgp, d, nuis = fitted
    with pytest.raises(ValueError):
        fit_adjust(d, nuis, dgp.scenario, "hinge")


def test_discrete_plugin_nulling_is_exact():
    dgp = Dgp(DgpSpec("discrete", {"binary_y": False}))
    data, _ = enumerate_discrete(dgp)
    fp = fit_adjust(data, dgp.oracle, dgp.scenario, "mse", "plugin")
    est = estimate(data, dgp.oracle, dgp.scenario, "plugin", predictor=fp.predict)
    assert abs(est.value) < 1e-12
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fp.predict(data)
