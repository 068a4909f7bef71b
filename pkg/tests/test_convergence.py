import numpy as np
import pytest

from pnmkit.convergence import (
    ConvergenceBoundInputs,
    empirical_rate,
    theorem1_bound,
    theorem_step_size,
)
from pnmkit.problems import AdditiveNoiseOracle, QuadraticModel, RosenbrockProblem


class TestTheorem1Bound:
    def test_hand_value(self):
        # beta = 0.81, beta0 = 1: pair weight (0.81 + 0.19)^2 = 1;
        # c1 = (1 * 2 + 0.19^2) / 0.19^2 = 2.0361 / 0.0361
        # bound(t=99) = 2/100 * max(2, 10) + c1 / 10
        inputs = ConvergenceBoundInputs(
            smoothness=1.0, grad_bound=1.0, sigma2=1.0, step_constant=1.0,
            loss_gap=1.0, beta1=0.9, beta0=1.0)
        c1 = (2.0 + 0.0361) / 0.0361
        expected = 0.02 * 10.0 + c1 / 10.0
        assert theorem1_bound(inputs, 99) == pytest.approx(expected, rel=1e-12)
        assert theorem1_bound(inputs, 99) == pytest.approx(5.8402, abs=2e-4)

    def test_deterministic_gd_limit(self):
        # sigma = G = 0 and beta = beta0 = 0 kill the noise term entirely
        inputs = ConvergenceBoundInputs(
            smoothness=2.0, grad_bound=0.0, sigma2=0.0, step_constant=0.5,
            loss_gap=3.0, beta1=0.0, beta0=0.0)
        t = 63
        expected = 2 * 3.0 / (t + 1) * max(4.0, np.sqrt(t + 1.0) / 0.5)
        assert theorem1_bound(inputs, t) == pytest.approx(expected, rel=1e-12)

    def test_nonincreasing_once_step_rule_binds(self):
        inputs = ConvergenceBoundInputs(
            smoothness=1.0, grad_bound=1.0, sigma2=1.0, step_constant=1.0,
            loss_gap=1.0, beta1=0.9, beta0=1.0)
        # sqrt(t+1)/C >= 2L from t + 1 >= 4 here
        vals = [theorem1_bound(inputs, t) for t in range(4, 200)]
        assert np.all(np.diff(vals) <= 1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            ConvergenceBoundInputs(0.0, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ConvergenceBoundInputs(1.0, 1.0, 1.0, 1.0, -0.5)
        inputs = ConvergenceBoundInputs(1.0, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            theorem1_bound(inputs, -1)


class TestStepRule:
    def test_saturates_at_inverse_smoothness(self):
        assert theorem_step_size(2.0, 10.0, 4) == 0.25  # 1 / (2 L)

    def test_scales_with_horizon(self):
        assert theorem_step_size(0.1, 1.0, 400) == pytest.approx(0.05)
        assert theorem_step_size(0.1, 1.0, 1600) == pytest.approx(0.025)


class TestEmpiricalRate:
    @pytest.fixture()
    def oracle(self):
        base = QuadraticModel([0.0, 0.0], np.diag([1.0, 4.0]))
        return AdditiveNoiseOracle(base, 1.0)

    def test_slope_is_negative_and_bound_holds(self, oracle):
        est = empirical_rate(oracle, [3.0, -2.0], [100, 1000], list(range(6)),
                             smoothness=4.0, step_constant=1.0)
        assert est.slope < 0
        loss0, _ = oracle.full_gradient(np.array([3.0, -2.0]))
        inputs = ConvergenceBoundInputs(
            smoothness=4.0, grad_bound=est.measured_grad_bound, sigma2=1.0,
            step_constant=1.0, loss_gap=loss0, beta1=0.9, beta0=1.0)
        assert np.all(est.mean_min_grad_sq <= est.bound_values(inputs))

    def test_deterministic_case_respects_bound(self):
        # zero noise on a strongly convex quadratic: the empirical minimum
        # must sit below the bound at every horizon
        base = QuadraticModel([0.0, 0.0], np.diag([1.0, 4.0]))
        oracle = AdditiveNoiseOracle(base, 0.0)
        est = empirical_rate(oracle, [3.0, -2.0], [100, 400], [0],
                             smoothness=4.0, step_constant=1.0)
        loss0, _ = oracle.full_gradient(np.array([3.0, -2.0]))
        inputs = ConvergenceBoundInputs(
            smoothness=4.0, grad_bound=est.measured_grad_bound, sigma2=0.0,
            step_constant=1.0, loss_gap=loss0, beta1=0.9, beta0=1.0)
        assert np.all(est.mean_min_grad_sq <= est.bound_values(inputs))

    def test_rosenbrock_bound_with_measured_constants(self):
        # measured (not assumed) gradient bound on the visited region; the
        # smoothness constant used by the step rule must dominate the
        # curvature actually encountered, which we verify post hoc
        L = 1500.0
        oracle = AdditiveNoiseOracle(RosenbrockProblem(), 0.25)
        theta0 = np.array([-1.2, 1.0])
        est = empirical_rate(oracle, theta0, [100, 1000], [0, 1, 2, 3, 4],
                             smoothness=L, step_constant=1.0)
        loss0, _ = oracle.full_gradient(theta0)
        inputs = ConvergenceBoundInputs(
            smoothness=L, grad_bound=est.measured_grad_bound, sigma2=0.25,
            step_constant=1.0, loss_gap=loss0, beta1=0.9, beta0=1.0)
        assert np.all(est.mean_min_grad_sq <= est.bound_values(inputs))

    def test_restarts_use_per_horizon_steps(self, oracle):
        est = empirical_rate(oracle, [1.0, 1.0], [64, 256], [0, 1],
                             smoothness=4.0, step_constant=0.8)
        assert est.step_sizes[0] == theorem_step_size(4.0, 0.8, 64)
        assert est.step_sizes[1] == theorem_step_size(4.0, 0.8, 256)

    def test_determinism(self, oracle):
        a = empirical_rate(oracle, [1.0, 1.0], [50, 200], [0, 1], smoothness=4.0)
        b = empirical_rate(oracle, [1.0, 1.0], [50, 200], [0, 1], smoothness=4.0)
        np.testing.assert_array_equal(a.mean_min_grad_sq, b.mean_min_grad_sq)
        assert a.slope == b.slope

    def test_needs_two_horizons(self, oracle):
        with pytest.raises(ValueError):
            empirical_rate(oracle, [1.0, 1.0], [100], [0], smoothness=4.0)
