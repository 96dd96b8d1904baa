"""
Classical time allocation: reference heuristic, uniform split, gradient descent on the
durations (finite-difference or implicit gradients) and rescue by temporal scaling.
"""

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from allocnet.utils.implicit_diff import KKTSingularError, loss_gradient, objective
from allocnet.utils.polynomial import PiecewiseTrajectory
from allocnet.utils.qp_builder import T_MIN, ProblemInstance, QPProblem, assemble
from allocnet.utils.qp_solver import QPSolution, SolverSettings, solve


@dataclass(frozen=True)
class TimeAllocation:
    durations: np.ndarray  # seconds

    def __post_init__(self):
        durations = np.array(self.durations, dtype=float).reshape(-1)
        if durations.size == 0:
            raise ValueError("A time allocation needs at least one duration")
        if np.any(~np.isfinite(durations)) or np.any(durations < T_MIN - 1e-12):
            raise ValueError(f"Durations must be finite and at least {T_MIN} s, got {durations}")
        durations.setflags(write=False)
        object.__setattr__(self, "durations", durations)

    def __len__(self) -> int:
        return self.durations.shape[0]

    @property
    def total(self) -> float:
        return float(self.durations.sum())


class OptimizeStatus(str, Enum):
    Converged = "Converged"
    IterCap = "IterCap"
    InfeasibleStart = "InfeasibleStart"
    Stalled = "Stalled"  # line search aborted on an infeasible trial


@dataclass
class OptimizerSettings:
    max_iters: int = 100
    grad_tol: float = 1e-3
    armijo_c: float = 1e-4
    shrink: float = 0.5
    fd_step: float = 1e-4  # relative forward-difference step
    max_relative_step: float = 0.5  # largest relative duration change of the first trial step
    max_line_search: int = 40
    rel_tol: float = 1e-10  # relative cost decrease treated as stagnation
    solver: SolverSettings = field(default_factory=SolverSettings)
    verbose: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.grad_tol <= 0 or self.fd_step <= 0 or self.max_relative_step <= 0:
            raise ValueError("grad_tol, fd_step and max_relative_step must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")


@dataclass
class OptimizeReport:
    allocation: Optional[TimeAllocation]
    cost: float
    iterations: int
    gradient_solves: int  # finite-difference solves; the solve at the current point is reused
    line_search_solves: int
    wall_time: float  # seconds
    status: OptimizeStatus
    cost_trace: List[float] = field(default_factory=list)
    fd_fallbacks: int = 0
    solution: Optional[QPSolution] = None
    degree: int = 5

    @property
    def solve_count(self) -> int:
        """Solves at the start and at every accepted iterate, plus the finite-difference solves."""
        return 1 + self.iterations + self.gradient_solves

    @property
    def total_solves(self) -> int:
        """Every QP solved, rejected line-search trials included."""
        return 1 + self.gradient_solves + self.line_search_solves

    def trajectory(self) -> Optional[PiecewiseTrajectory]:
        if self.solution is None or not self.solution.optimal:
            return None
        return PiecewiseTrajectory.from_vector(self.solution.c_star, self.allocation.durations, self.degree)


def solve_at(instance: ProblemInstance, t, settings: Optional[SolverSettings] = None) -> Tuple[QPProblem, QPSolution]:
    prob = assemble(instance, t)
    return prob, solve(prob, settings)


def trajectory_cost(instance: ProblemInstance, t, settings: Optional[SolverSettings] = None) -> float:
    """Objective at t, ``inf`` when the QP is not solved to optimality."""
    prob, sol = solve_at(instance, t, settings)
    return objective(sol, prob, instance, t) if sol.optimal else float("inf")


def _trapezoid_time(length: float, v_max: float, a_max: float) -> float:
    if length >= v_max ** 2 / a_max:
        return length / v_max + v_max / a_max
    return 2.0 * np.sqrt(length / a_max)


def reference_time(instance: ProblemInstance) -> TimeAllocation:
    """
    Trapezoidal-velocity time per segment along the polyline start, overlap witnesses, goal.
    """
    path = np.vstack([instance.q0[:, 0], instance.corridors.witnesses(), instance.qf[:, 0]])
    lengths = np.linalg.norm(np.diff(path, axis=0), axis=1)
    v_max, a_max = instance.d_m[0], instance.d_m[1]
    durations = [max(_trapezoid_time(L, v_max, a_max), T_MIN) for L in lengths]
    return TimeAllocation(np.array(durations))


def uniform_allocation(instance: ProblemInstance, total: float) -> TimeAllocation:
    m = instance.num_segments
    if total < m * T_MIN:
        raise ValueError(f"Total time {total} s is below the floor of {m} x {T_MIN} s")
    return TimeAllocation(np.full(m, total / m))


def rescue(instance: ProblemInstance, t, factor: float = 1.2, cap: int = 10,
           settings: Optional[SolverSettings] = None) -> Tuple[Optional[TimeAllocation], Optional[QPSolution], int]:
    """Scale all durations by ``factor`` until the QP is solvable, at most ``cap`` times.

    :return: (allocation, solution, number of scalings); allocation and solution are None on failure.
    """
    if factor <= 1:
        raise ValueError(f"Scaling factor must exceed 1, got {factor}")
    t = np.maximum(np.asarray(t, dtype=float), T_MIN)
    for k in range(cap + 1):
        _, sol = solve_at(instance, t, settings)
        if sol.optimal:
            return TimeAllocation(t), sol, k
        t = t * factor
    return None, None, cap


def scale_to_feasible(instance: ProblemInstance, t, factor: float = 1.2, cap: int = 10,
                      settings: Optional[SolverSettings] = None) -> Optional[TimeAllocation]:
    return rescue(instance, t, factor, cap, settings)[0]


def fd_gradient(instance: ProblemInstance, t: np.ndarray, cost: float, settings: OptimizerSettings) -> Tuple[np.ndarray, int]:
    """Forward differences of the objective, one re-solve per duration.

    :return: gradient and the number of QP solves spent.
    """
    grad = np.zeros_like(t)
    solves = 0
    for i in range(t.shape[0]):
        step = settings.fd_step * t[i]
        shifted = t.copy()
        shifted[i] += step
        value = trajectory_cost(instance, shifted, settings.solver)
        solves += 1
        if np.isfinite(value):
            grad[i] = (value - cost) / step
            continue
        shifted[i] = t[i] - step
        if shifted[i] >= T_MIN:
            value = trajectory_cost(instance, shifted, settings.solver)
            solves += 1
            if np.isfinite(value):
                grad[i] = (cost - value) / step
                continue
        warnings.warn(f"Finite difference for duration {i} hit infeasible shifted durations, component set to zero")
    return grad, solves


def _descend(instance: ProblemInstance, t0, settings: OptimizerSettings,
             gradient: Callable[[np.ndarray, QPProblem, QPSolution, float], Tuple[np.ndarray, int, bool]],
             name: str) -> OptimizeReport:
    start = time.perf_counter()
    t = np.maximum(np.asarray(t0, dtype=float).reshape(-1), T_MIN)
    prob, sol = solve_at(instance, t, settings.solver)
    if not sol.optimal:
        return OptimizeReport(allocation=TimeAllocation(t), cost=float("inf"), iterations=0, gradient_solves=0,
                              line_search_solves=0, wall_time=time.perf_counter() - start,
                              status=OptimizeStatus.InfeasibleStart, solution=sol, degree=instance.degree)

    cost = objective(sol, prob, instance, t)
    trace = [cost]
    gradient_solves, line_search_solves, fallbacks = 0, 0, 0
    iterations = 0
    status = OptimizeStatus.IterCap

    while True:
        grad, solves, fell_back = gradient(t, prob, sol, cost)
        gradient_solves += solves
        fallbacks += int(fell_back)

        if np.linalg.norm(grad) < settings.grad_tol:
            status = OptimizeStatus.Converged
            break
        if iterations >= settings.max_iters:
            status = OptimizeStatus.IterCap
            break

        direction = -grad
        step = settings.max_relative_step / max(float(np.max(np.abs(direction) / t)), 1e-300)
        accepted = None
        hit_infeasible = False
        for _ in range(settings.max_line_search):
            trial = np.maximum(t + step * direction, T_MIN)
            trial_prob, trial_sol = solve_at(instance, trial, settings.solver)
            line_search_solves += 1
            if not trial_sol.optimal:
                if hit_infeasible:
                    break
                hit_infeasible = True
                step *= settings.shrink
                continue
            trial_cost = objective(trial_sol, trial_prob, instance, trial)
            if trial_cost <= cost + settings.armijo_c * float(grad @ (trial - t)):
                accepted = (trial, trial_prob, trial_sol, trial_cost)
                break
            if hit_infeasible:
                break
            step *= settings.shrink

        if accepted is None:
            # no decrease along the descent direction down to the smallest step
            status = OptimizeStatus.Stalled if hit_infeasible else OptimizeStatus.Converged
            break

        improvement = (cost - accepted[3]) / max(abs(cost), 1.0)
        t, prob, sol, cost = accepted
        trace.append(cost)
        iterations += 1
        if settings.verbose:
            print(f"{name} iter {iterations}: cost {cost:.6g}, |grad| {np.linalg.norm(grad):.3e}, t {np.round(t, 4)}")
        if improvement < settings.rel_tol:
            status = OptimizeStatus.Converged
            break

    return OptimizeReport(allocation=TimeAllocation(t), cost=cost, iterations=iterations,
                          gradient_solves=gradient_solves, line_search_solves=line_search_solves,
                          wall_time=time.perf_counter() - start, status=status, cost_trace=trace,
                          fd_fallbacks=fallbacks, solution=sol, degree=instance.degree)


def optimize_fd(instance: ProblemInstance, t0, settings: Optional[OptimizerSettings] = None) -> OptimizeReport:
    """Projected gradient descent with forward-difference gradients and backtracking line search."""
    settings = settings or OptimizerSettings()

    def gradient(t, prob, sol, cost):
        grad, solves = fd_gradient(instance, t, cost, settings)
        return grad, solves, False

    return _descend(instance, t0, settings, gradient, "fd")


def optimize_implicit(instance: ProblemInstance, t0, settings: Optional[OptimizerSettings] = None) -> OptimizeReport:
    """Same descent as :func:`optimize_fd` with gradients from the differentiated KKT system."""
    settings = settings or OptimizerSettings()

    def gradient(t, prob, sol, cost):
        try:
            return loss_gradient(sol, instance, t, prob=prob), 0, False
        except KKTSingularError as e:
            warnings.warn(f"Implicit gradient failed ({e}), using finite differences for this iteration")
            grad, solves = fd_gradient(instance, t, cost, settings)
            return grad, solves, True

    return _descend(instance, t0, settings, gradient, "implicit")
