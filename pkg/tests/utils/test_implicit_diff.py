"""Tests for allocnet.utils.implicit_diff"""

import numpy as np
import pytest

from allocnet.utils.implicit_diff import (MatrixJacobians, kkt_residual, lagrangian_gradient, loss_gradient,
                                          matrix_jacobians, solution_jacobian)
from allocnet.utils.qp_builder import QPProblem
from allocnet.utils.qp_solver import SolverSettings, solve
from allocnet.utils.time_opt import solve_at, trajectory_cost

SETTINGS = SolverSettings(time_budget_ms=None)


def central_difference(instance, t, h=1e-4):
    grad = np.zeros_like(t)
    for i in range(t.shape[0]):
        up, down = t.copy(), t.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (trajectory_cost(instance, up, SETTINGS) - trajectory_cost(instance, down, SETTINGS)) / (2 * h)
    return grad


class TestLossGradient:
    """Gradients of c*^T Q c* + w_t sum(t)"""

    def test_single_segment_closed_form(self, unit_move):
        # J(T) = 720 / T^5 + w_t T
        t = np.array([1.0])
        prob, sol = solve_at(unit_move, t, SETTINGS)
        grad = loss_gradient(sol, unit_move, t, prob=prob)
        assert grad[0] == pytest.approx(-3600.0 + 17.5, rel=1e-4)

    def test_matches_finite_differences(self, two_boxes):
        t = np.array([1.0, 1.0])
        prob, sol = solve_at(two_boxes, t, SETTINGS)
        np.testing.assert_allclose(loss_gradient(sol, two_boxes, t, prob=prob), central_difference(two_boxes, t),
                                   rtol=1e-3)

    def test_unequal_durations(self, two_boxes):
        t = np.array([0.8, 1.4])
        prob, sol = solve_at(two_boxes, t, SETTINGS)
        np.testing.assert_allclose(loss_gradient(sol, two_boxes, t, prob=prob), central_difference(two_boxes, t),
                                   rtol=1e-3)

    def test_lagrangian_form_agrees(self, two_boxes):
        t = np.array([1.0, 1.2])
        prob, sol = solve_at(two_boxes, t, SETTINGS)
        np.testing.assert_allclose(lagrangian_gradient(sol, two_boxes, t, prob=prob),
                                   loss_gradient(sol, two_boxes, t, prob=prob), rtol=1e-4)

    def test_reduction_of_inactive_rows_is_exact(self, two_boxes):
        t = np.array([1.0, 1.2])
        prob, sol = solve_at(two_boxes, t, SETTINGS)
        reduced = loss_gradient(sol, two_boxes, t, prob=prob, reduce_inactive=True)
        full = loss_gradient(sol, two_boxes, t, prob=prob, reduce_inactive=False)
        np.testing.assert_allclose(reduced, full, rtol=1e-5)


class TestSolutionJacobian:
    """dc*/dt and the pieces it is built from"""

    def test_kkt_residual_small_at_solution(self, two_boxes):
        prob, sol = solve_at(two_boxes, [1.0, 1.0], SETTINGS)
        assert np.abs(kkt_residual(sol, prob)).max() < 1e-5

    def test_jacobian_shapes(self, two_boxes):
        prob, _ = solve_at(two_boxes, [1.0, 1.0], SETTINGS)
        jac = matrix_jacobians(two_boxes, [1.0, 1.0], prob.eq_rows)
        assert jac.num_segments == 2
        assert jac.dQ_dt.shape == (2, 36, 36)
        assert jac.dA_dt.shape == (2, prob.A.shape[0], 36)
        assert jac.dG_dt.shape == (2, prob.G.shape[0], 36)

    def test_coefficients_match_finite_differences(self, unit_move):
        h = 1e-3
        _, up = solve_at(unit_move, [1.0 + h], SETTINGS)
        _, down = solve_at(unit_move, [1.0 - h], SETTINGS)
        prob, sol = solve_at(unit_move, [1.0], SETTINGS)
        dc = solution_jacobian(sol, prob, matrix_jacobians(unit_move, [1.0], prob.eq_rows))
        assert dc.shape == (18, 1)
        np.testing.assert_allclose(dc[:, 0], (up.c_star - down.c_star) / (2 * h), atol=1e-3)


class TestActiveConstraints:
    """A corner-cutting instance with corridor rows at their bounds"""

    T = np.array([1.0, 1.0])

    def active_rows(self, prob, sol):
        slack = prob.h - prob.G @ sol.c_star
        return np.flatnonzero((sol.lambda_star > 1e-4) & (slack < 1e-6))

    def test_has_active_rows(self, l_turn):
        prob, sol = solve_at(l_turn, self.T, SETTINGS)
        assert sol.optimal
        assert self.active_rows(prob, sol).size > 0

    def test_inactive_rows_have_zero_multipliers(self, l_turn):
        prob, sol = solve_at(l_turn, self.T, SETTINGS)
        slack = prob.h - prob.G @ sol.c_star
        assert np.all(sol.lambda_star[slack > 1e-2] < 1e-5)

    def test_gradients_agree(self, l_turn):
        prob, sol = solve_at(l_turn, self.T, SETTINGS)
        reduced = loss_gradient(sol, l_turn, self.T, prob=prob, reduce_inactive=True)
        full = loss_gradient(sol, l_turn, self.T, prob=prob, reduce_inactive=False)
        np.testing.assert_allclose(reduced, full, rtol=1e-5)
        np.testing.assert_allclose(lagrangian_gradient(sol, l_turn, self.T, prob=prob), reduced, rtol=1e-4)
        np.testing.assert_allclose(central_difference(l_turn, self.T), reduced, rtol=1e-3)

    def test_duplicated_active_row(self, l_turn):
        prob, sol = solve_at(l_turn, self.T, SETTINGS)
        jac = matrix_jacobians(l_turn, self.T, prob.eq_rows)
        k = self.active_rows(prob, sol)[0]

        doubled = QPProblem(Q=prob.Q, A=prob.A, b=prob.b, G=np.vstack([prob.G, prob.G[k]]),
                            h=np.append(prob.h, prob.h[k]), eq_rows=prob.eq_rows)
        doubled_jac = MatrixJacobians(jac.dQ_dt, jac.dA_dt, np.concatenate([jac.dG_dt, jac.dG_dt[:, [k]]], axis=1))
        doubled_sol = solve(doubled, SETTINGS)
        assert doubled_sol.optimal

        dc = solution_jacobian(sol, prob, jac)
        doubled_dc = solution_jacobian(doubled_sol, doubled, doubled_jac)
        assert np.abs(doubled_dc - dc).max() < 1e-6
