"""Tests for allocnet.utils.metrics"""

import math

import numpy as np
import pytest

from allocnet.utils.metrics import (InstanceResult, _check_is_equal, constraint_violations, summarize,
                                    trajectory_summary, verify_trajectory)
from allocnet.utils.polynomial import PiecewiseTrajectory, PolySegment
from allocnet.utils.qp_solver import SolverSettings
from allocnet.utils.time_opt import optimize_implicit, OptimizerSettings
from tests.conftest import QUINTIC


def quintic(duration):
    coeffs = np.zeros((6, 3))
    coeffs[:, 0] = QUINTIC / duration ** np.arange(6)
    return PiecewiseTrajectory((PolySegment(coeffs, duration),))


def result(method, success, cost=1.0, time=2.0, dataset="d"):
    return InstanceResult(method=method, dataset=dataset, instance=0, success=success, min_control=cost,
                          traj_time=time, comp_time_ms=3.0, segments=1, length_miss=False, scalings=0,
                          status="Converged")


class TestVerification:
    """Independent recheck of planned trajectories"""

    def test_quintic_is_safe(self, unit_move):
        assert verify_trajectory(quintic(1.0), unit_move)
        violations = constraint_violations(quintic(1.0), unit_move)
        assert violations["boundary"] < 1e-12
        assert violations["corridor"] < 0

    def test_fast_quintic_breaks_acceleration(self, unit_move):
        violations = constraint_violations(quintic(0.5), unit_move)
        assert violations["derivative"] == pytest.approx(5.76 / 0.25 - 6.0)
        assert not verify_trajectory(quintic(0.5), unit_move)

    def test_wrong_goal(self, unit_move):
        coeffs = np.zeros((6, 3))
        coeffs[:, 0] = QUINTIC * 0.5
        assert not verify_trajectory(PiecewiseTrajectory((PolySegment(coeffs, 1.0),)), unit_move)

    def test_missing_trajectory(self, unit_move):
        assert not verify_trajectory(None, unit_move)

    def test_segment_count_mismatch(self, two_boxes):
        with pytest.raises(ValueError):
            constraint_violations(quintic(1.0), two_boxes)

    def test_optimized_plan_is_safe(self, two_boxes):
        report = optimize_implicit(two_boxes, [1.0, 1.0], OptimizerSettings(solver=SolverSettings(time_budget_ms=None)))
        traj = report.trajectory()
        assert verify_trajectory(traj, two_boxes)
        cost, total = trajectory_summary(traj, 3)
        assert total == pytest.approx(report.allocation.total)
        assert cost + 17.5 * total == pytest.approx(report.cost, rel=1e-6)


class TestSummarize:
    """Aggregation of per-instance results"""

    def test_means_over_successes(self):
        rows = summarize([result("fd", True, 1.0, 2.0), result("fd", False, 100.0, 100.0),
                          result("fd", True, 3.0, 4.0), result("implicit", True)])
        assert [r.method for r in rows] == ["fd", "implicit"]
        assert rows[0].min_control == pytest.approx(2.0)
        assert rows[0].traj_time == pytest.approx(3.0)
        assert rows[0].success_rate == pytest.approx(2 / 3)
        assert rows[0].instances == 3

    def test_no_success(self):
        row, = summarize([result("uniform+scale", False)])
        assert math.isnan(row.min_control) and row.success_rate == 0.0

    def test_empty(self):
        assert summarize([]) == []

    def test_rows_compare_without_timing(self):
        a = summarize([result("fd", True)])
        b = [r._replace(comp_time_ms=99.0) for r in a]
        _check_is_equal(a, b)
        with pytest.raises(AssertionError):
            _check_is_equal(a, [r._replace(min_control=5.0) for r in a])
