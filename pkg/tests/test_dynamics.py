import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from coopdrive.dynamics import (
    bicycle_derivative,
    bicycle_jacobians,
    bicycle_step,
    build_prediction_matrices,
    discretize_lag,
    lag_continuous,
    linearize_bicycle,
    rollout_bicycle,
    stack_linear_dynamics,
)


def zoh_series(T_l, T_s, terms=30):
    """Oracle: truncated Taylor series of expm([[A, B], [0, 0]] * T_s)."""
    A, B = lag_continuous(T_l)
    M = np.zeros((4, 4))
    M[:3, :3] = A
    M[:3, 3:] = B
    M = M * T_s
    E = np.eye(4)
    term = np.eye(4)
    for k in range(1, terms + 1):
        term = term @ M / k
        E = E + term
    return E[:3, :3], E[:3, 3:]


def finite_difference_jacobians(X, U, L_V, h=1e-6):
    """Oracle: central differences of the bicycle derivative."""
    J_X = np.zeros((4, 4))
    J_U = np.zeros((4, 2))
    for i in range(4):
        dx = np.zeros(4)
        dx[i] = h
        J_X[:, i] = (bicycle_derivative(X + dx, U, L_V) - bicycle_derivative(X - dx, U, L_V)) / (2 * h)
    for i in range(2):
        du = np.zeros(2)
        du[i] = h
        J_U[:, i] = (bicycle_derivative(X, U + du, L_V) - bicycle_derivative(X, U - du, L_V)) / (2 * h)
    return J_X, J_U


class TestDiscretizeLag:
    def test_zero_interval_is_identity(self):
        m = discretize_lag(0.5, 0.0)
        assert_allclose(m.A_bar, np.eye(3), atol=1e-14)
        assert_allclose(m.B_bar, np.zeros((3, 1)), atol=1e-14)

    @pytest.mark.parametrize("T_l", [0.2, 0.5, 1.0])
    @pytest.mark.parametrize("T_s", [0.05, 0.1])
    def test_matches_series_oracle(self, T_l, T_s):
        m = discretize_lag(T_l, T_s)
        A_ref, B_ref = zoh_series(T_l, T_s)
        assert_allclose(m.A_bar, A_ref, atol=1e-9)
        assert_allclose(m.B_bar, B_ref, atol=1e-9)

    def test_frozen_values_for_default_lag(self):
        # Computed once with zoh_series(0.5, 0.1).
        m = discretize_lag(0.5, 0.1)
        A_expected = np.array(
            [
                [1.0, 0.1, 0.00468268826949546],
                [0.0, 1.0, 0.09063462346100906],
                [0.0, 0.0, 0.8187307530779818],
            ]
        )
        B_expected = np.array([[0.00031731173050454], [0.00936537653899093], [0.18126924692201812]])
        assert_allclose(m.A_bar, A_expected, atol=1e-12)
        assert_allclose(m.B_bar, B_expected, atol=1e-12)

    def test_double_integrator_subblock(self):
        for T_l, T_s in [(0.3, 0.07), (1.0, 0.25)]:
            m = discretize_lag(T_l, T_s)
            assert_allclose(m.A_bar[:2, :2], np.array([[1.0, T_s], [0.0, 1.0]]), atol=1e-12)

    def test_rejects_nonpositive_lag(self):
        with pytest.raises(ValueError):
            discretize_lag(0.0, 0.1)
        with pytest.raises(ValueError):
            discretize_lag(-1.0, 0.1)


class TestPredictionMatrices:
    def test_single_step(self):
        m = discretize_lag(0.5, 0.1)
        p = build_prediction_matrices(m, 1)
        assert_allclose(p.Gamma, m.A_bar)
        assert_allclose(p.Lambda, m.B_bar)

    def test_two_step_layout(self):
        m = discretize_lag(0.5, 0.1)
        p = build_prediction_matrices(m, 2)
        assert_allclose(p.Gamma[3:6], m.A_bar @ m.A_bar)
        assert_allclose(p.Lambda[3:6, 0:1], m.A_bar @ m.B_bar)
        assert_allclose(p.Lambda[3:6, 1:2], m.B_bar)
        assert_allclose(p.Lambda[0:3, 1:2], np.zeros((3, 1)))

    def test_matches_rollout(self):
        rng = np.random.default_rng(7)
        m = discretize_lag(0.5, 0.1)
        T = 25
        p = build_prediction_matrices(m, T)
        x0 = rng.normal(size=3)
        u = rng.normal(size=T)
        stacked = p.Gamma @ x0 + p.Lambda @ u
        x = x0.copy()
        for k in range(T):
            x = m.A_bar @ x + (m.B_bar[:, 0] * u[k])
            assert_allclose(stacked[3 * k : 3 * (k + 1)], x, atol=1e-10)

    def test_rejects_empty_horizon(self):
        m = discretize_lag(0.5, 0.1)
        with pytest.raises(ValueError):
            build_prediction_matrices(m, 0)


class TestBicycleModel:
    def test_straight_motion(self):
        d = bicycle_derivative(np.array([0.0, 0.0, 0.0, 10.0]), np.zeros(2), 3.5)
        assert_allclose(d, [10.0, 0.0, 0.0, 0.0], atol=1e-14)

    def test_heading_aligned_with_y(self):
        d = bicycle_derivative(np.array([0.0, 0.0, math.pi / 2, 5.0]), np.array([1.0, 0.0]), 3.5)
        assert_allclose(d, [0.0, 5.0, 0.0, 1.0], atol=1e-14)

    def test_yaw_rate_at_full_steering(self):
        psi = math.radians(34.0)
        d = bicycle_derivative(np.array([0.0, 0.0, 0.0, 5.0]), np.array([0.0, psi]), 3.5)
        expected = 5.0 * math.sin(math.atan(0.5 * math.tan(psi))) / 1.75
        assert_allclose(d[2], expected, rtol=1e-12)

    def test_rejects_steering_singularity(self):
        with pytest.raises(ValueError):
            bicycle_derivative(np.array([0.0, 0.0, 0.0, 5.0]), np.array([0.0, math.pi / 2]), 3.5)

    def test_step_is_definitional(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            X = rng.normal(size=4)
            U = np.array([rng.normal(), rng.uniform(-0.5, 0.5)])
            got = bicycle_step(X, U, 0.1, 3.5)
            assert_allclose(got, X + 0.1 * bicycle_derivative(X, U, 3.5), atol=0.0)

    def test_stationary_fixed_point(self):
        X = np.array([1.0, 2.0, 0.3, 0.0])
        assert_allclose(bicycle_step(X, np.zeros(2), 0.1, 3.5), X)

    def test_constant_speed_straight(self):
        X = np.array([0.0, 0.0, 0.0, 10.0])
        assert_allclose(bicycle_step(X, np.zeros(2), 0.1, 3.5), [1.0, 0.0, 0.0, 10.0], atol=1e-14)


class TestLinearization:
    def test_exact_at_linearization_point(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            X = np.array([rng.normal(), rng.normal(), rng.normal(), rng.uniform(0, 25)])
            U = np.array([rng.uniform(-7, 7), rng.uniform(-0.5, 0.5)])
            lin = linearize_bicycle(X, U, 0.1, 3.5)
            assert_allclose(lin.A @ X + lin.B @ U + lin.G, bicycle_step(X, U, 0.1, 3.5), atol=1e-12)

    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            X = np.array([rng.normal(), rng.normal(), rng.uniform(-math.pi, math.pi), rng.uniform(0, 25)])
            U = np.array([rng.uniform(-7, 7), rng.uniform(-math.radians(30), math.radians(30))])
            J_X, J_U = bicycle_jacobians(X, U, 3.5)
            F_X, F_U = finite_difference_jacobians(X, U, 3.5)
            scale = max(1.0, np.abs(F_X).max())
            assert np.abs(J_X - F_X).max() <= 1e-5 * scale
            scale_u = max(1.0, np.abs(F_U).max())
            assert np.abs(J_U - F_U).max() <= 1e-5 * scale_u

    def test_row_for_x_at_rest(self):
        J_X, _ = bicycle_jacobians(np.array([0.0, 0.0, 0.0, 0.0]), np.zeros(2), 3.5)
        assert_allclose(J_X[0], [0.0, 0.0, 0.0, 1.0], atol=1e-14)


class TestStackedDynamics:
    def _random_steps(self, rng, T):
        steps = []
        for _ in range(T):
            X = np.array([rng.normal(), rng.normal(), rng.uniform(-1, 1), rng.uniform(0, 25)])
            U = np.array([rng.uniform(-7, 7), rng.uniform(-0.5, 0.5)])
            steps.append(linearize_bicycle(X, U, 0.1, 3.5))
        return steps

    @pytest.mark.parametrize("T", [1, 5, 30])
    def test_matches_sequential_rollout(self, T):
        rng = np.random.default_rng(T)
        steps = self._random_steps(rng, T)
        stacked = stack_linear_dynamics(steps)
        x0 = rng.normal(size=4)
        u = rng.normal(size=(T, 2))
        one_shot = stacked.A_stack @ x0 + stacked.B_stack @ u.ravel() + stacked.G_stack
        x = x0.copy()
        for k, step in enumerate(steps):
            x = step.A @ x + step.B @ u[k] + step.G
            assert np.abs(one_shot[4 * k : 4 * (k + 1)] - x).max() <= 1e-9

    def test_time_invariant_degenerates_to_powers(self):
        step = linearize_bicycle(np.array([0.0, 0.0, 0.1, 12.0]), np.array([1.0, 0.05]), 0.1, 3.5)
        stacked = stack_linear_dynamics([step] * 3)
        assert_allclose(stacked.A_stack[0:4], step.A)
        assert_allclose(stacked.A_stack[4:8], step.A @ step.A)
        assert_allclose(stacked.B_stack[4:8, 0:2], step.A @ step.B)
        assert_allclose(stacked.B_stack[8:12, 2:4], step.A @ step.B)

    def test_single_step_identity(self):
        step = linearize_bicycle(np.array([1.0, 2.0, 0.2, 8.0]), np.array([0.5, 0.1]), 0.1, 3.5)
        stacked = stack_linear_dynamics([step])
        assert_allclose(stacked.A_stack, step.A)
        assert_allclose(stacked.B_stack, step.B)
        assert_allclose(stacked.G_stack, step.G)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            stack_linear_dynamics([])

    def test_rollout_helper_consistency(self):
        rng = np.random.default_rng(5)
        x0 = np.array([0.0, 0.0, 0.1, 10.0])
        U = np.column_stack([rng.uniform(-2, 2, 10), rng.uniform(-0.2, 0.2, 10)])
        X = rollout_bicycle(x0, U, 0.1, 3.5)
        x = x0
        for k in range(10):
            x = bicycle_step(x, U[k], 0.1, 3.5)
            assert_allclose(X[k], x)
