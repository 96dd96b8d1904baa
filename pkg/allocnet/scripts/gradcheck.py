"""
Compare implicit duration gradients with central finite differences on random feasible instances.
"""

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from allocnet.utils.qp_builder import ProblemInstance
from allocnet.utils.qp_solver import SolverSettings

KINK_FACTOR = 10.0  # one-sided differences disagreeing by this many tolerances mark an active-set change


@dataclass
class GradCheck:
    instance: int
    segments: int
    implicit: np.ndarray
    lagrangian: np.ndarray
    finite_difference: np.ndarray
    relative_error: float
    lagrangian_error: float
    crossing: bool
    passed: bool


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).max() / max(float(np.abs(b).max()), 1.0))


def check_instance(index: int, instance: ProblemInstance, t: np.ndarray, step: float = 1e-5, tol: float = 1e-3,
                   settings: Optional[SolverSettings] = None) -> Optional[GradCheck]:
    """
    Central differences with relative step ``step``. When the forward and backward
    one-sided differences disagree the shifted durations straddle an active-set change and the
    instance is flagged instead of failed. None if the QP at ``t`` is not solved.
    """
    from allocnet.utils.implicit_diff import lagrangian_gradient, loss_gradient
    from allocnet.utils.time_opt import solve_at, trajectory_cost

    prob, sol = solve_at(instance, t, settings)
    if not sol.optimal:
        return None
    cost = trajectory_cost(instance, t, settings)
    implicit = loss_gradient(sol, instance, t, prob=prob)
    lagrangian = lagrangian_gradient(sol, instance, t, prob=prob)

    central = np.zeros_like(t)
    crossing = False
    for i in range(t.shape[0]):
        h = step * t[i]
        up, down = t.copy(), t.copy()
        up[i] += h
        down[i] -= h
        f_up, f_down = trajectory_cost(instance, up, settings), trajectory_cost(instance, down, settings)
        if not (np.isfinite(f_up) and np.isfinite(f_down)):
            crossing = True
            continue
        central[i] = (f_up - f_down) / (2 * h)
        forward, backward = (f_up - cost) / h, (cost - f_down) / h
        if abs(forward - backward) > KINK_FACTOR * tol * max(abs(central[i]), 1.0):
            crossing = True

    error = _relative(implicit, central)
    return GradCheck(instance=index, segments=instance.num_segments, implicit=implicit, lagrangian=lagrangian,
                     finite_difference=central, relative_error=error,
                     lagrangian_error=_relative(lagrangian, central), crossing=crossing,
                     passed=crossing or error <= tol)


def run_gradcheck(n: int, seed: int, kappa: int = 3, d_m=(4.0, 6.0, 8.0), n_res: int = 20, w_t: float = 17.5,
                  m_max: int = 3, step: float = 1e-5, tol: float = 1e-3, max_attempts: Optional[int] = None,
                  verbose: bool = False) -> List[GradCheck]:
    """``n`` checks on generated instances solvable at their reference allocation."""
    from allocnet.utils.corridor import GeneratorConfig
    from allocnet.utils.dataset import make_record, record_seeds

    config = GeneratorConfig(num_segments_range=(1, m_max), m_max=m_max)
    settings = SolverSettings(time_budget_ms=None)
    max_attempts = max_attempts or 10 * n
    checks = []
    for s in record_seeds(seed, max_attempts):
        if len(checks) == n:
            break
        record = make_record(s, config, kappa=kappa, d_m=d_m, n_res=n_res, w_t=w_t)
        if not record.feasible_at_reference:
            continue
        check = check_instance(len(checks), record.instance, record.t_bar.durations.copy(), step, tol, settings)
        if check is None:
            continue
        checks.append(check)
        if verbose:
            print(f"instance {check.instance}: M={check.segments}, relative error {check.relative_error:.2e}"
                  + (" (active-set crossing)" if check.crossing else ""))
    if len(checks) < n:
        raise RuntimeError(f"Only {len(checks)} of {n} instances were solvable after {max_attempts} attempts")
    return checks


def summary_line(checks: List[GradCheck]) -> str:
    crossings = sum(c.crossing for c in checks)
    passed = sum(c.passed and not c.crossing for c in checks)
    line = f"{passed}/{len(checks) - crossings} within tol"
    if crossings:
        line += f" ({crossings} active-set crossing(s) excluded)"
    return line


def save_checks(checks: List[GradCheck], path) -> Path:
    import pandas as pd

    rows = []
    for c in checks:
        for i in range(c.segments):
            rows.append({"instance": c.instance, "segments": c.segments, "duration_index": i,
                         "implicit": c.implicit[i], "lagrangian": c.lagrangian[i],
                         "finite_difference": c.finite_difference[i], "relative_error": c.relative_error,
                         "crossing": c.crossing, "passed": c.passed})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.12g")
    return path


def add_arguments(parser: argparse.ArgumentParser):
    from allocnet.scripts.cli import add_problem_arguments

    add_problem_arguments(parser)
    parser.add_argument("-n", "--n", type=int, default=20, help="Number of instances")
    parser.add_argument("-m_max", "--m_max", type=int, default=3)
    parser.add_argument("-step", "--step", type=float, default=1e-5, help="Relative finite difference step")
    parser.add_argument("-tol", "--tol", type=float, default=1e-3, help="Relative error tolerance")
    parser.add_argument("-o", "--output", type=str, default="gradcheck.csv", help="CSV of every gradient entry")


def run(args) -> int:
    from allocnet.scripts.cli import d_m

    if args.n < 1 or args.step <= 0 or args.tol <= 0:
        raise ValueError("n, step and tol must be positive")
    checks = run_gradcheck(args.n, args.seed, kappa=args.kappa, d_m=d_m(args), n_res=args.n_res, w_t=args.w_t,
                           m_max=args.m_max, step=args.step, tol=args.tol, verbose=args.verbosity > 1)
    save_checks(checks, args.output)
    print(summary_line(checks))
    return 0 if all(c.passed for c in checks) else 1


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip())
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == "__main__":
    main()
