"""
Dense primal-dual interior-point solver (Mehrotra predictor-corrector) for

    min  c^T Q c   s.t.   A c = b,   G c <= h

returning the primal solution together with the duals needed for implicit differentiation.
"""

import time
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from allocnet.utils.qp_builder import QPProblem


class QPStatus(str, Enum):
    Optimal = "Optimal"
    Infeasible = "Infeasible"
    MaxIterations = "MaxIterations"


@dataclass
class SolverSettings:
    max_iter: int = 200
    tol: float = 1e-8  # interior stopping tolerance
    accept_tol: float = 1e-6  # scaled KKT residual accepted as Optimal
    time_budget_ms: Optional[float] = 500.0  # None disables the wall-clock limit
    step_fraction: float = 0.99
    verbose: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")
        if not 0 < self.tol <= self.accept_tol:
            raise ValueError(f"Tolerances must satisfy 0 < tol <= accept_tol, got {self.tol}, {self.accept_tol}")
        if self.time_budget_ms is not None and self.time_budget_ms <= 0:
            raise ValueError("time_budget_ms must be positive or None")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class QPSolution:
    c_star: np.ndarray
    nu_star: np.ndarray
    lambda_star: np.ndarray
    status: QPStatus
    kkt_residual: float
    iterations: int = 0
    solve_time: float = 0.0  # seconds
    objective: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == QPStatus.Optimal


def residuals(prob: QPProblem, c: np.ndarray, nu: np.ndarray, lam: np.ndarray):
    """Stationarity, primal equality, complementarity and inequality violation, each as a max-norm."""
    stationarity = 2.0 * prob.Q @ c + prob.A.T @ nu + prob.G.T @ lam
    slack = prob.G @ c - prob.h
    r_stat = float(np.abs(stationarity).max(initial=0.0)) / (1.0 + float(np.abs(c).max(initial=0.0)))
    r_eq = float(np.abs(prob.A @ c - prob.b).max(initial=0.0))
    r_comp = float(np.abs(lam * slack).max(initial=0.0))
    r_ineq = float(max(slack.max(initial=0.0), 0.0))
    return r_stat, r_eq, r_comp, r_ineq


def certify_infeasible(prob: QPProblem) -> bool:
    """True when an LP feasibility problem over the same constraints is reported infeasible."""
    from scipy.optimize import linprog

    n = prob.num_vars
    res = linprog(np.zeros(n), A_ub=prob.G if prob.G.size else None, b_ub=prob.h if prob.G.size else None,
                  A_eq=prob.A if prob.A.size else None, b_eq=prob.b if prob.A.size else None,
                  bounds=[(None, None)] * n, method="highs")
    return res.status == 2


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _initial_point(P, A, b, G, h):
    from scipy.linalg import lu_factor, lu_solve

    n, p = P.shape[0], A.shape[0]
    K = np.block([[P + G.T @ G, A.T], [A, np.zeros((p, p))]])
    K[:n, :n] += 1e-12 * max(1.0, np.abs(K[:n, :n]).max()) * np.eye(n)
    sol = lu_solve(lu_factor(K), np.concatenate([G.T @ h, b]))
    x, y = sol[:n], sol[n:]
    s = h - G @ x
    z = -s.copy()
    alpha_p = -s.min()
    if alpha_p >= 0:
        s = s + 1.0 + alpha_p
    alpha_d = -z.min()
    if alpha_d >= 0:
        z = z + 1.0 + alpha_d
    return x, y, s, z


def _equality_only(prob: QPProblem, settings: SolverSettings, start: float) -> QPSolution:
    from scipy.linalg import lstsq

    n, p = prob.num_vars, prob.A.shape[0]
    K = np.block([[2.0 * prob.Q, prob.A.T], [prob.A, np.zeros((p, p))]])
    sol = lstsq(K, np.concatenate([np.zeros(n), prob.b]))[0]
    c, nu = sol[:n], sol[n:]
    lam = np.zeros(0)
    residual = max(residuals(prob, c, nu, lam))
    status = QPStatus.Optimal if residual <= settings.accept_tol else QPStatus.Infeasible
    return QPSolution(c, nu, lam, status, residual, 1, time.perf_counter() - start, float(c @ prob.Q @ c))


def solve(prob: QPProblem, settings: Optional[SolverSettings] = None) -> QPSolution:
    """
    Solve the QP with a Mehrotra predictor-corrector interior-point method.

    The Newton system is reduced to the saddle-point form
    ``[[P + G^T S^-1 Z G, A^T], [A, 0]]`` and factorized once per iteration.
    When the iteration stalls or runs out of iterations, an LP feasibility check
    decides between ``Infeasible`` and ``MaxIterations``.
    """
    from scipy.linalg import lu_factor, lu_solve

    settings = settings or SolverSettings()
    start = time.perf_counter()
    if prob.G.shape[0] == 0:
        return _equality_only(prob, settings, start)

    P = prob.Q + prob.Q.T  # gradient of c^T Q c
    A, b, G, h = prob.A, prob.b, prob.G, prob.h
    n, p, m = P.shape[0], A.shape[0], G.shape[0]
    b_scale = 1.0 + float(np.abs(b).max(initial=0.0))
    h_scale = 1.0 + float(np.abs(h).max())

    x, y, s, z = _initial_point(P, A, b, G, h)
    status = None
    checked_feasible = False
    primal_history = []
    iteration = 0

    while iteration < settings.max_iter:
        r_d = P @ x + A.T @ y + G.T @ z
        r_p = A @ x - b
        r_g = G @ x + s - h
        mu = float(s @ z) / m
        pres = max(float(np.abs(r_p).max(initial=0.0)) / b_scale, float(np.abs(r_g).max()) / h_scale)
        dres = float(np.abs(r_d).max()) / (1.0 + float(np.abs(x).max()))
        primal_history.append(pres)

        if settings.verbose:
            print(f"iter {iteration:3d}: pres {pres:.3e}, dres {dres:.3e}, mu {mu:.3e}")

        if not (np.isfinite(pres) and np.isfinite(dres) and np.isfinite(mu)):
            break
        if pres <= settings.tol and dres <= settings.tol and mu <= settings.tol:
            status = QPStatus.Optimal
            break

        stalled = (iteration >= 25 and pres > settings.accept_tol and pres > 0.5 * primal_history[iteration - 10])
        if stalled and not checked_feasible:
            if certify_infeasible(prob):
                status = QPStatus.Infeasible
                break
            checked_feasible = True

        if settings.time_budget_ms is not None and (time.perf_counter() - start) * 1000 > settings.time_budget_ms:
            break

        w = z / s
        H = P + (G.T * w) @ G
        H[np.diag_indices(n)] += 1e-14 * max(1.0, np.abs(H).max())
        K = np.block([[H, A.T], [A, np.zeros((p, p))]])
        lu = lu_factor(K, check_finite=False)

        def direction(r_sz):
            rhs = np.concatenate([-r_d + G.T @ ((r_sz - z * r_g) / s), -r_p])
            sol = lu_solve(lu, rhs, check_finite=False)
            dx, dy = sol[:n], sol[n:]
            ds = -r_g - G @ dx
            dz = -(r_sz + z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx_a, dy_a, ds_a, dz_a = direction(s * z)
        alpha_a = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx, dy, ds, dz = direction(s * z + ds_a * dz_a - sigma * mu)
        alpha = min(1.0, settings.step_fraction * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        iteration += 1

    lam = np.maximum(z, 0.0)
    residual = max(residuals(prob, x, y, lam))
    if status != QPStatus.Infeasible:
        if np.isfinite(residual) and residual <= settings.accept_tol:
            status = QPStatus.Optimal
        elif certify_infeasible(prob):
            status = QPStatus.Infeasible
        else:
            status = QPStatus.MaxIterations
            warnings.warn(f"QP solver stopped after {iteration} iterations with KKT residual {residual:.3e}")

    return QPSolution(c_star=x, nu_star=y, lambda_star=lam, status=status, kkt_residual=residual,
                      iterations=iteration, solve_time=time.perf_counter() - start,
                      objective=float(x @ prob.Q @ x))
