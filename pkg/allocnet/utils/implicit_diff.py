"""
Sensitivities of the QP solution and of the trajectory objective with respect to the durations.

The KKT equality system

    2 Q c + A^T nu + G^T lam = 0
    A c - b                  = 0
    diag(lam) (G c - h)      = 0

is differentiated implicitly. Its Jacobian in ``(c, nu, lam)`` is factorized once
and solved against one right-hand side per duration.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from allocnet.utils.qp_builder import (ProblemInstance, QPProblem, assemble, build_cost, build_equalities,
                                       build_inequalities)
from allocnet.utils.qp_solver import QPSolution

REGULARIZATION = 1e-10
REFINEMENT_STEPS = 3


class KKTSingularError(RuntimeError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True)
class MatrixJacobians:
    dQ_dt: np.ndarray  # (M, n, n)
    dA_dt: np.ndarray  # (M, m_eq, n)
    dG_dt: np.ndarray  # (M, m_in, n)

    @property
    def num_segments(self) -> int:
        return self.dQ_dt.shape[0]


def kkt_residual(sol: QPSolution, prob: QPProblem) -> np.ndarray:
    """Stacked stationarity, primal equality and complementarity blocks at the solution."""
    c, nu, lam = sol.c_star, sol.nu_star, sol.lambda_star
    return np.concatenate([
        2.0 * prob.Q @ c + prob.A.T @ nu + prob.G.T @ lam,
        prob.A @ c - prob.b,
        lam * (prob.G @ c - prob.h),
    ])


def matrix_jacobians(instance: ProblemInstance, t, eq_rows: Optional[np.ndarray] = None) -> MatrixJacobians:
    """Exact derivatives of Q, A and G with respect to every duration. ``b`` and ``h`` do not depend on t."""
    t = np.asarray(t, dtype=float)
    if eq_rows is None:
        eq_rows = assemble(instance, t).eq_rows
    dQ, dA, dG = [], [], []
    for i in range(instance.num_segments):
        dQ.append(build_cost(instance, t, wrt=i))
        dA.append(build_equalities(instance, t, wrt=i, eq_rows=eq_rows)[0])
        dG.append(build_inequalities(instance, t, wrt=i)[0])
    return MatrixJacobians(np.stack(dQ), np.stack(dA), np.stack(dG))


def _factor_and_solve(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """LU with ``eps * ||K||`` added to the diagonal, followed by iterative refinement against K."""
    from scipy.linalg import lu_factor, lu_solve
    from scipy.linalg.lapack import dgecon

    norm = float(np.abs(K).sum(axis=1).max())
    K_reg = K.copy()
    K_reg[np.diag_indices(K.shape[0])] += REGULARIZATION * max(norm, 1.0)
    lu, piv = lu_factor(K_reg, check_finite=False)
    rcond = float(dgecon(lu, float(np.abs(K_reg).sum(axis=0).max()), norm="1")[0])
    if not np.isfinite(rcond) or rcond < np.finfo(float).eps:
        raise KKTSingularError("KKT matrix is singular after regularization", 1.0 / max(rcond, 1e-300))

    x = lu_solve((lu, piv), rhs, check_finite=False)
    residual = rhs - K @ x
    for _ in range(REFINEMENT_STEPS):
        candidate = x + lu_solve((lu, piv), residual, check_finite=False)
        candidate_residual = rhs - K @ candidate
        if not np.abs(candidate_residual).max() < np.abs(residual).max():
            break
        x, residual = candidate, candidate_residual
    if not np.all(np.isfinite(x)):
        raise KKTSingularError("KKT solve produced non-finite values", 1.0 / max(rcond, 1e-300))
    return x


def solution_jacobian(sol: QPSolution, prob: QPProblem, jac: MatrixJacobians,
                      reduce_inactive: bool = True) -> np.ndarray:
    """
    ``dc*/dt`` as an ``(n, M)`` matrix.

    :param reduce_inactive: Eliminate rows whose slack exceeds their dual by an exact
        Schur complement before factorizing. With False the full KKT matrix is used.
    """
    c, nu, lam = sol.c_star, sol.nu_star, sol.lambda_star
    Q, A, G, h = prob.Q, prob.A, prob.G, prob.h
    n, p = Q.shape[0], A.shape[0]
    M = jac.num_segments
    gap = G @ c - h  # nonpositive at a feasible point

    # right-hand sides, one column per duration
    r_stat = -(2.0 * np.einsum("ijk,k->ji", jac.dQ_dt, c)
               + np.einsum("ijk,j->ki", jac.dA_dt, nu)
               + np.einsum("ijk,j->ki", jac.dG_dt, lam))
    r_eq = -np.einsum("ijk,k->ji", jac.dA_dt, c)
    dG_c = np.einsum("ijk,k->ji", jac.dG_dt, c)  # (m_in, M)

    slack = -gap
    if reduce_inactive:
        inactive = (slack >= lam) & (slack > 1e-12)
    else:
        inactive = np.zeros(G.shape[0], dtype=bool)
    active = ~inactive

    G_I, G_J = G[inactive], G[active]
    weight = lam[inactive] / slack[inactive]
    H = 2.0 * Q + (G_I.T * weight) @ G_I
    r_stat = r_stat - G_I.T @ (weight[:, None] * dG_c[inactive])
    r_comp = -(lam[active][:, None] * dG_c[active])

    q = G_J.shape[0]
    K = np.zeros((n + p + q, n + p + q))
    K[:n, :n] = H
    K[:n, n:n + p] = A.T
    K[:n, n + p:] = G_J.T
    K[n:n + p, :n] = A
    K[n + p:, :n] = lam[active][:, None] * G_J
    K[n + p:, n + p:] = np.diag(gap[active])

    rhs = np.vstack([r_stat, r_eq, r_comp]).reshape(-1, M)
    return _factor_and_solve(K, rhs)[:n]


def objective(sol: QPSolution, prob: QPProblem, instance: ProblemInstance, t) -> float:
    """``c*^T Q c* + w_t * sum(t)``."""
    return float(sol.c_star @ prob.Q @ sol.c_star + instance.w_t * np.sum(t))


def loss_gradient(sol: QPSolution, instance: ProblemInstance, t, prob: Optional[QPProblem] = None,
                  jac: Optional[MatrixJacobians] = None, reduce_inactive: bool = True) -> np.ndarray:
    """Total derivative of the objective in t: explicit Q term, implicit term through c*, and w_t."""
    t = np.asarray(t, dtype=float)
    prob = prob if prob is not None else assemble(instance, t)
    jac = jac if jac is not None else matrix_jacobians(instance, t, prob.eq_rows)
    c = sol.c_star
    explicit = np.einsum("j,ijk,k->i", c, jac.dQ_dt, c)
    dc = solution_jacobian(sol, prob, jac, reduce_inactive=reduce_inactive)
    implicit = dc.T @ (2.0 * prob.Q @ c)
    return explicit + implicit + instance.w_t


def lagrangian_gradient(sol: QPSolution, instance: ProblemInstance, t, prob: Optional[QPProblem] = None,
                        jac: Optional[MatrixJacobians] = None) -> np.ndarray:
    """Envelope form of the same gradient: partial derivative of the Lagrangian in t at fixed (c*, nu*, lam*)."""
    t = np.asarray(t, dtype=float)
    if jac is None:
        prob = prob if prob is not None else assemble(instance, t)
        jac = matrix_jacobians(instance, t, prob.eq_rows)
    c, nu, lam = sol.c_star, sol.nu_star, sol.lambda_star
    return (np.einsum("j,ijk,k->i", c, jac.dQ_dt, c)
            + np.einsum("j,ijk,k->i", nu, jac.dA_dt, c)
            + np.einsum("j,ijk,k->i", lam, jac.dG_dt, c)
            + instance.w_t)
