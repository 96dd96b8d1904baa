"""Tests for allocnet.utils.qp_solver"""

import numpy as np
import pytest

from allocnet.utils.dataset import generate_dataset
from allocnet.utils.qp_builder import ProblemInstance, QPProblem, assemble
from allocnet.utils.qp_solver import QPStatus, SolverSettings, residuals, solve
from tests.conftest import QUINTIC, box_instance

SETTINGS = SolverSettings(time_budget_ms=None)


def toy_problem(upper=None) -> QPProblem:
    """min |c|^2 s.t. c1 + c2 = 1, optionally c1 <= upper."""
    G = np.array([[1.0, 0.0]]) if upper is not None else np.zeros((0, 2))
    h = np.array([upper]) if upper is not None else np.zeros(0)
    return QPProblem(Q=np.eye(2), A=np.array([[1.0, 1.0]]), b=np.array([1.0]), G=G, h=h, eq_rows=np.array([0]))


class TestToyProblems:
    """Small problems with known primal and dual solutions"""

    def test_equality_only(self):
        sol = solve(toy_problem(), SETTINGS)
        assert sol.status == QPStatus.Optimal
        np.testing.assert_allclose(sol.c_star, [0.5, 0.5], atol=1e-10)
        assert sol.objective == pytest.approx(0.5)
        assert sol.lambda_star.shape == (0,)

    def test_active_inequality_duals(self):
        sol = solve(toy_problem(upper=0.2), SETTINGS)
        assert sol.optimal
        np.testing.assert_allclose(sol.c_star, [0.2, 0.8], atol=1e-6)
        np.testing.assert_allclose(sol.nu_star, [-1.6], atol=1e-5)
        np.testing.assert_allclose(sol.lambda_star, [1.2], atol=1e-5)

    def test_inactive_inequality_has_zero_dual(self):
        sol = solve(toy_problem(upper=5.0), SETTINGS)
        np.testing.assert_allclose(sol.c_star, [0.5, 0.5], atol=1e-6)
        assert sol.lambda_star[0] == pytest.approx(0.0, abs=1e-6)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            SolverSettings(tol=1e-5, accept_tol=1e-6)
        with pytest.raises(ValueError):
            SolverSettings(time_budget_ms=0.0)
        with pytest.raises(ValueError):
            SolverSettings(max_iter=0)


class TestTrajectoryQP:
    """Solves of assembled trajectory problems"""

    def test_unit_move_is_quintic(self, unit_move):
        sol = solve(assemble(unit_move, [1.0]), SETTINGS)
        assert sol.status == QPStatus.Optimal
        np.testing.assert_allclose(sol.c_star[:6], QUINTIC, atol=1e-5)
        np.testing.assert_allclose(sol.c_star[6:], 0.0, atol=1e-5)
        assert sol.objective == pytest.approx(720.0, rel=1e-5)

    def test_kkt_residuals(self, two_boxes):
        prob = assemble(two_boxes, [1.0, 1.2])
        sol = solve(prob, SETTINGS)
        assert sol.optimal
        assert sol.kkt_residual <= SETTINGS.accept_tol
        assert all(r <= 1e-6 for r in residuals(prob, sol.c_star, sol.nu_star, sol.lambda_star))
        assert np.all(sol.lambda_star >= 0)

    def test_infeasible(self, long_move):
        sol = solve(assemble(long_move, [0.1]), SETTINGS)
        assert sol.status == QPStatus.Infeasible
        assert not sol.optimal

    def test_temporal_scaling(self, two_boxes):
        instance = ProblemInstance.rest_to_rest(two_boxes.corridors, [0.5, 0.0, 0.0], [2.5, 0.0, 0.0], (1e3, 1e3))
        base = solve(assemble(instance, [1.0, 1.0]), SETTINGS).objective
        stretched = solve(assemble(instance, [2.0, 2.0]), SETTINGS).objective
        assert stretched == pytest.approx(base / 2 ** 5, rel=1e-5)

    @pytest.mark.parametrize("kappa", [3, 4])
    @pytest.mark.parametrize("alpha", [0.5, 2.0, 4.0])
    def test_single_segment_scaling_law(self, kappa, alpha):
        instance = box_instance(kappa=kappa, d_m=(1e3, 1e3, 1e3))
        base = solve(assemble(instance, [1.0]), SETTINGS).objective
        scaled = solve(assemble(instance, [alpha]), SETTINGS).objective
        assert scaled == pytest.approx(base / alpha ** (2 * kappa - 1), rel=1e-6)

    def test_iteration_limit(self, unit_move):
        with pytest.warns(UserWarning):
            sol = solve(assemble(unit_move, [1.0]), SolverSettings(max_iter=1, time_budget_ms=None))
        assert sol.status == QPStatus.MaxIterations

    def test_residual_sweep(self):
        records = generate_dataset(seed=11, count=25)
        solved = 0
        for r in records:
            for stretch in (1.0, 1.5):
                prob = assemble(r.instance, stretch * r.t_bar.durations)
                sol = solve(prob, SETTINGS)
                if not sol.optimal:
                    continue
                solved += 1
                assert max(residuals(prob, sol.c_star, sol.nu_star, sol.lambda_star)) <= SETTINGS.accept_tol
                assert np.all(sol.lambda_star >= 0)
        assert solved >= sum(r.feasible_at_reference for r in records)
