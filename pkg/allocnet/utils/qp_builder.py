"""
Assembly of the minimum-control QP for a fixed time allocation.

Decision vector layout: ``c[(i * 3 + a) * (N + 1) + p]`` is the coefficient of
``tau^p`` on axis ``a`` of segment ``i``.

Row ordering (used for dual bookkeeping):

* equalities: start conditions ``(order, axis)``, end conditions ``(order, axis)``,
  then continuity ``(junction, order, axis)``; rows removed as redundant are
  recorded in ``QPProblem.eq_rows``.
* inequalities: all corridor rows ``(segment, sample, face)``, then all
  derivative-bound rows ``(segment, sample, order, axis, sign)`` with sign ``+`` first.

Every entry of Q, A and G is a polynomial in the durations; each builder takes
``wrt`` to return the exact partial derivative with respect to ``t[wrt]``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from allocnet.utils.corridor import CorridorSequence
from allocnet.utils.polynomial import basis, basis_duration_derivative, gram_matrix

T_MIN = 0.05  # seconds
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ProblemInstance:
    corridors: CorridorSequence
    q0: np.ndarray  # (3, kappa): position, velocity, ... up to order kappa-1
    qf: np.ndarray  # (3, kappa)
    d_m: np.ndarray  # (kappa-1,): v_max, a_max[, j_max]
    n_res: int = 20
    w_t: float = 17.5
    kappa: int = 3

    def __post_init__(self):
        if self.kappa not in (3, 4):
            raise ValueError(f"kappa must be 3 or 4, got {self.kappa}")
        q0 = np.array(self.q0, dtype=float)
        qf = np.array(self.qf, dtype=float)
        d_m = np.array(self.d_m, dtype=float).reshape(-1)
        if q0.shape != (3, self.kappa) or qf.shape != (3, self.kappa):
            raise ValueError(f"Boundary states must have shape (3, {self.kappa}), got {q0.shape} and {qf.shape}")
        if d_m.shape != (self.kappa - 1,):
            raise ValueError(f"d_m must have {self.kappa - 1} entries, got {d_m.shape[0]}")
        if np.any(d_m <= 0):
            raise ValueError(f"Derivative bounds must be strictly positive, got {d_m}")
        if int(self.n_res) < 2:
            raise ValueError(f"n_res must be at least 2, got {self.n_res}")
        if self.w_t < 0:
            raise ValueError(f"w_t must be nonnegative, got {self.w_t}")
        if not self.corridors[0].contains(q0[:, 0], slack=1e-9):
            raise ValueError("Start position lies outside the first corridor")
        if not self.corridors[-1].contains(qf[:, 0], slack=1e-9):
            raise ValueError("Goal position lies outside the last corridor")
        for name, value in (("q0", q0), ("qf", qf), ("d_m", d_m)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_res", int(self.n_res))
        object.__setattr__(self, "w_t", float(self.w_t))

    @property
    def degree(self) -> int:
        return 2 * self.kappa - 1

    @property
    def num_segments(self) -> int:
        return len(self.corridors)

    @property
    def num_coeffs(self) -> int:
        return 3 * self.num_segments * (self.degree + 1)

    @classmethod
    def rest_to_rest(cls, corridors: CorridorSequence, start: Sequence[float], goal: Sequence[float],
                     d_m: Sequence[float], kappa: int = 3, **kwargs) -> "ProblemInstance":
        q0 = np.zeros((3, kappa))
        qf = np.zeros((3, kappa))
        q0[:, 0] = start
        qf[:, 0] = goal
        return cls(corridors, q0, qf, np.asarray(d_m, dtype=float)[:kappa - 1], kappa=kappa, **kwargs)


@dataclass(frozen=True)
class QPProblem:
    """``min c^T Q c  s.t.  A c = b,  G c <= h``."""
    Q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    eq_rows: np.ndarray  # indices of the assembled equality rows kept in A

    @property
    def num_vars(self) -> int:
        return self.Q.shape[0]


def _check_durations(instance: ProblemInstance, t) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.shape[0] != instance.num_segments:
        raise ValueError(f"Expected {instance.num_segments} durations, got {t.shape[0]}")
    if np.any(t < T_MIN - 1e-12):
        raise ValueError(f"Durations must be at least {T_MIN} s, got {t}")
    return t


def _block(instance: ProblemInstance, segment: int, axis: int) -> slice:
    width = instance.degree + 1
    start = (segment * 3 + axis) * width
    return slice(start, start + width)


def _segment_slice(instance: ProblemInstance, segment: int) -> slice:
    width = 3 * (instance.degree + 1)
    return slice(segment * width, (segment + 1) * width)


def _sampled_basis(instance: ProblemInstance, duration: float, order: int, d_duration: bool) -> np.ndarray:
    """(n_res + 1, N + 1) basis rows at tau_j = j * duration / n_res, or their duration derivatives."""
    fractions = np.arange(instance.n_res + 1) / instance.n_res
    if d_duration:
        return np.array([basis_duration_derivative(f, duration, instance.degree, order) for f in fractions])
    return np.array([basis(f * duration, instance.degree, order) for f in fractions])


def _end_basis(instance: ProblemInstance, duration: float, order: int, d_duration: bool) -> np.ndarray:
    if d_duration:
        return basis_duration_derivative(1.0, duration, instance.degree, order)
    return basis(duration, instance.degree, order)


def build_cost(instance: ProblemInstance, t, wrt: Optional[int] = None) -> np.ndarray:
    """Block-diagonal Gram matrix Q(t), or dQ/dt[wrt]."""
    t = _check_durations(instance, t)
    n = instance.num_coeffs
    Q = np.zeros((n, n))
    segments = range(instance.num_segments) if wrt is None else [wrt]
    for i in segments:
        gram = gram_matrix(t[i], instance.degree, instance.kappa, d_duration=wrt is not None)
        for axis in range(3):
            blk = _block(instance, i, axis)
            Q[blk, blk] = gram
    return Q


def _assemble_equalities(instance: ProblemInstance, t: np.ndarray, wrt: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    kappa, m = instance.kappa, instance.num_segments
    n = instance.num_coeffs
    d_duration = wrt is not None
    rows, rhs = [], []

    for k in range(kappa):
        for axis in range(3):
            row = np.zeros(n)
            if not d_duration:
                row[_block(instance, 0, axis)] = basis(0.0, instance.degree, k)
            rows.append(row)
            rhs.append(instance.q0[axis, k])

    for k in range(kappa):
        for axis in range(3):
            row = np.zeros(n)
            if wrt is None or wrt == m - 1:
                row[_block(instance, m - 1, axis)] = _end_basis(instance, t[m - 1], k, d_duration)
            rows.append(row)
            rhs.append(instance.qf[axis, k])

    for i in range(m - 1):
        for k in range(kappa):
            for axis in range(3):
                row = np.zeros(n)
                if wrt is None or wrt == i:
                    row[_block(instance, i, axis)] = _end_basis(instance, t[i], k, d_duration)
                if not d_duration:
                    row[_block(instance, i + 1, axis)] = -basis(0.0, instance.degree, k)
                rows.append(row)
                rhs.append(0.0)

    return np.array(rows), np.array(rhs)


def independent_rows(A: np.ndarray, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Indices of a maximal linearly independent subset of the rows of A, in original order."""
    from scipy.linalg import qr

    if A.shape[0] == 0:
        return np.arange(0)
    _, R, perm = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.arange(0)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(perm[:rank])


def build_equalities(instance: ProblemInstance, t, wrt: Optional[int] = None,
                     eq_rows: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Boundary and continuity equalities ``A c = b`` (or ``dA/dt[wrt]`` and zeros).

    Redundant rows are dropped; pass ``eq_rows`` to reuse a previous selection.
    """
    t = _check_durations(instance, t)
    A, b = _assemble_equalities(instance, t, wrt)
    if eq_rows is None:
        eq_rows = independent_rows(A if wrt is None else _assemble_equalities(instance, t, None)[0])
    if wrt is not None:
        b = np.zeros_like(b)
    return A[eq_rows], b[eq_rows]


def build_inequalities(instance: ProblemInstance, t, wrt: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Sampled corridor and derivative-bound rows ``G c <= h`` (or ``dG/dt[wrt]`` and zeros)."""
    t = _check_durations(instance, t)
    n = instance.num_coeffs
    kappa, m = instance.kappa, instance.num_segments
    d_duration = wrt is not None
    n_samples = instance.n_res + 1

    corridor_rows, corridor_rhs = [], []
    for i in range(m):
        poly = instance.corridors[i]
        block = np.zeros((n_samples * poly.num_faces, n))
        if wrt is None or wrt == i:
            B = _sampled_basis(instance, t[i], 0, d_duration)
            block[:, _segment_slice(instance, i)] = np.vstack([np.kron(poly.normals, B[j][None, :])
                                                               for j in range(n_samples)])
        corridor_rows.append(block)
        corridor_rhs.append(np.tile(poly.offsets, n_samples))

    bound_rows, bound_rhs = [], []
    signs = np.array([1.0, -1.0])
    for i in range(m):
        per_order = [_sampled_basis(instance, t[i], k, d_duration) if (wrt is None or wrt == i) else None
                     for k in range(1, kappa)]
        block = np.zeros((n_samples * (kappa - 1) * 6, n))
        rhs = []
        r = 0
        for j in range(n_samples):
            for k in range(1, kappa):
                B = per_order[k - 1]
                for axis in range(3):
                    for sign in signs:
                        if B is not None:
                            block[r, _block(instance, i, axis)] = sign * B[j]
                        rhs.append(instance.d_m[k - 1])
                        r += 1
        bound_rows.append(block)
        bound_rhs.append(np.array(rhs))

    G = np.vstack(corridor_rows + bound_rows)
    h = np.concatenate(corridor_rhs + bound_rhs)
    if d_duration:
        h = np.zeros_like(h)
    return G, h


def assemble(instance: ProblemInstance, t) -> QPProblem:
    t = _check_durations(instance, t)
    Q = build_cost(instance, t)
    A_full, b_full = _assemble_equalities(instance, t, None)
    eq_rows = independent_rows(A_full)
    G, h = build_inequalities(instance, t)
    return QPProblem(Q=Q, A=A_full[eq_rows], b=b_full[eq_rows], G=G, h=h, eq_rows=eq_rows)


def num_corridor_rows(instance: ProblemInstance) -> int:
    return (instance.n_res + 1) * sum(p.num_faces for p in instance.corridors.polytopes)
