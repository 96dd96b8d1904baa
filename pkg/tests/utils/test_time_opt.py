"""Tests for allocnet.utils.time_opt"""

import numpy as np
import pytest

from allocnet.utils import time_opt
from allocnet.utils.corridor import GeneratorConfig
from allocnet.utils.dataset import generate_dataset
from allocnet.utils.qp_builder import T_MIN
from allocnet.utils.qp_solver import SolverSettings, solve
from allocnet.utils.time_opt import (OptimizerSettings, OptimizeStatus, TimeAllocation, _trapezoid_time,
                                     optimize_fd, optimize_implicit, reference_time, rescue, uniform_allocation)

SETTINGS = OptimizerSettings(solver=SolverSettings(time_budget_ms=None))
T_STAR = (3600.0 / 17.5) ** (1 / 6)


class TestAllocations:
    """Reference, uniform and rescued allocations"""

    def test_trapezoid(self):
        assert _trapezoid_time(1.0, 4.0, 6.0) == pytest.approx(0.8165, abs=1e-4)
        assert _trapezoid_time(4.0, 4.0, 6.0) == pytest.approx(1.6667, abs=1e-4)

    def test_reference_time(self, unit_move, two_boxes):
        np.testing.assert_allclose(reference_time(unit_move).durations, [2.0 * np.sqrt(1 / 6)])
        assert len(reference_time(two_boxes)) == 2

    def test_uniform(self, two_boxes):
        np.testing.assert_allclose(uniform_allocation(two_boxes, 3.0).durations, [1.5, 1.5])
        with pytest.raises(ValueError):
            uniform_allocation(two_boxes, 0.01)

    def test_time_allocation_floor(self):
        with pytest.raises(ValueError):
            TimeAllocation([1.0, T_MIN / 2])
        with pytest.raises(ValueError):
            TimeAllocation([])

    def test_rescue_scales_until_feasible(self, unit_move):
        allocation, sol, scalings = rescue(unit_move, [0.5], settings=SETTINGS.solver)
        assert scalings == 4
        assert sol.optimal
        assert allocation.durations[0] == pytest.approx(0.5 * 1.2 ** 4)

    def test_rescue_gives_up(self, long_move):
        allocation, sol, scalings = rescue(long_move, [0.1], settings=SETTINGS.solver)
        assert allocation is None and sol is None
        assert scalings == 10

    def test_rescue_rejects_factor(self, unit_move):
        with pytest.raises(ValueError):
            rescue(unit_move, [1.0], factor=1.0)


class TestDescent:
    """Gradient descent on the durations"""

    @pytest.mark.parametrize("optimizer", [optimize_fd, optimize_implicit])
    def test_single_segment_optimum(self, unit_move, optimizer):
        report = optimizer(unit_move, [1.0], SETTINGS)
        assert report.status in (OptimizeStatus.Converged, OptimizeStatus.IterCap)
        assert report.allocation.durations[0] == pytest.approx(T_STAR, rel=1e-2)
        assert report.cost == pytest.approx(720 / T_STAR ** 5 + 17.5 * T_STAR, rel=1e-3)
        assert all(b <= a + 1e-9 for a, b in zip(report.cost_trace, report.cost_trace[1:]))
        assert report.trajectory() is not None

    def test_solve_counts(self, two_boxes):
        t0 = np.array([1.0, 1.0])
        fd = optimize_fd(two_boxes, t0, SETTINGS)
        implicit = optimize_implicit(two_boxes, t0, SETTINGS)
        assert fd.solve_count >= 3 * fd.iterations
        assert implicit.solve_count == implicit.iterations + 1
        assert implicit.gradient_solves == 0
        assert implicit.fd_fallbacks == 0

    @pytest.mark.parametrize("optimizer", [optimize_fd, optimize_implicit])
    def test_total_solves_match_solver_calls(self, two_boxes, optimizer, monkeypatch):
        calls = []

        def counting_solve(prob, settings=None):
            calls.append(1)
            return solve(prob, settings)

        monkeypatch.setattr(time_opt, "solve", counting_solve)
        report = optimizer(two_boxes, [1.0, 1.0], SETTINGS)
        assert report.iterations > 0
        assert report.total_solves == len(calls)

    def test_implicit_is_cheaper_than_fd(self):
        records = generate_dataset(seed=5, count=8, generator_config=GeneratorConfig(num_segments_range=(2, 3)))
        starts = [(r.instance, r.t_bar.durations) for r in records if r.feasible_at_reference]
        assert starts
        fd = [optimize_fd(instance, t0, SETTINGS) for instance, t0 in starts]
        implicit = [optimize_implicit(instance, t0, SETTINGS) for instance, t0 in starts]
        assert sum(r.total_solves for r in implicit) < sum(r.total_solves for r in fd)
        assert sum(r.wall_time for r in implicit) < sum(r.wall_time for r in fd)

    def test_infeasible_start(self, long_move):
        report = optimize_implicit(long_move, [0.1], SETTINGS)
        assert report.status == OptimizeStatus.InfeasibleStart
        assert report.cost == float("inf")
        assert report.trajectory() is None

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            OptimizerSettings(shrink=1.0)
        with pytest.raises(ValueError):
            OptimizerSettings(grad_tol=0.0)
