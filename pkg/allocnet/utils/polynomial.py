"""
Monomial-basis piecewise polynomials in R^3.

A segment is ``sigma_i(tau) = coeffs.T @ basis(tau)`` for local time ``tau`` in
``[0, duration]``; a trajectory concatenates segments in time.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

SUPPORTED_DEGREES = (5, 7)


def basis(t: float, degree: int, order: int = 0) -> np.ndarray:
    """
    Evaluate the ``order``-th derivative of ``[1, t, t^2, ..., t^degree]``.

    :param t: Local time in seconds.
    :param degree: Polynomial degree N.
    :param order: Derivative order, 0 returns the monomials themselves.
    :return: Vector of length ``degree + 1``. Entries below ``order`` are zero.
    """
    out = np.zeros(degree + 1)
    if order < 0 or order > degree:
        return out
    for j in range(order, degree + 1):
        out[j] = math.perm(j, order) * t ** (j - order)
    return out


def basis_duration_derivative(fraction: float, duration: float, degree: int, order: int = 0) -> np.ndarray:
    """
    d/d(duration) of ``basis(fraction * duration, degree, order)``.

    Every basis entry sampled at a fixed fraction of the segment is a monomial in
    the duration, so the derivative is exact.
    """
    out = np.zeros(degree + 1)
    if order < 0 or order > degree:
        return out
    for j in range(order + 1, degree + 1):
        p = j - order
        out[j] = math.perm(j, order) * p * fraction ** p * duration ** (p - 1)
    return out


def gram_matrix(duration: float, degree: int, kappa: int, d_duration: bool = False) -> np.ndarray:
    """
    Exact ``int_0^T beta^(kappa)(t) beta^(kappa)(t)^T dt`` for one axis of one segment.

    :param d_duration: Return the derivative of the Gram matrix with respect to T instead.
    """
    gram = np.zeros((degree + 1, degree + 1))
    for j in range(kappa, degree + 1):
        for k in range(kappa, degree + 1):
            p = j + k - 2 * kappa + 1
            scale = math.perm(j, kappa) * math.perm(k, kappa)
            if d_duration:
                gram[j, k] = scale * duration ** (p - 1)
            else:
                gram[j, k] = scale * duration ** p / p
    return gram


@dataclass(frozen=True)
class PolySegment:
    coeffs: np.ndarray  # (degree + 1, 3)
    duration: float

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] != 3:
            raise ValueError(f"Segment coefficients must have shape (N+1, 3), got {coeffs.shape}")
        if coeffs.shape[0] - 1 not in SUPPORTED_DEGREES:
            raise ValueError(f"Segment degree must be one of {SUPPORTED_DEGREES}, got {coeffs.shape[0] - 1}")
        if not self.duration > 0:
            raise ValueError(f"Segment duration must be positive, got {self.duration}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def kappa(self) -> int:
        return (self.degree + 1) // 2

    def eval(self, tau: float, order: int = 0) -> np.ndarray:
        return self.coeffs.T @ basis(tau, self.degree, order)


@dataclass(frozen=True)
class PiecewiseTrajectory:
    segments: Tuple[PolySegment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        if len(segments) < 1:
            raise ValueError("A trajectory needs at least one segment")
        if len({s.degree for s in segments}) != 1:
            raise ValueError("All segments of a trajectory must share the same degree")
        object.__setattr__(self, "segments", segments)

    @classmethod
    def from_vector(cls, c: np.ndarray, durations: Sequence[float], degree: int) -> "PiecewiseTrajectory":
        """
        Build a trajectory from the stacked QP variable. The layout is segment-major,
        then axis, then monomial power.
        """
        durations = np.asarray(durations, dtype=float)
        c = np.asarray(c, dtype=float).reshape(len(durations), 3, degree + 1)
        return cls(tuple(PolySegment(c[i].T, durations[i]) for i in range(len(durations))))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([s.coeffs.T.ravel() for s in self.segments])

    @property
    def degree(self) -> int:
        return self.segments[0].degree

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.segments])

    @property
    def breakpoints(self) -> np.ndarray:
        """Global start time of every segment followed by the final time."""
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def total_duration(self) -> float:
        return float(self.breakpoints[-1])

    def locate(self, t: float) -> Tuple[int, float]:
        """Map global time to (segment index, local time). Junctions belong to the left segment."""
        ends = self.breakpoints[1:]
        if t < 0 or t > ends[-1]:
            raise ValueError(f"Time {t} outside trajectory domain [0, {ends[-1]}]")
        i = min(int(np.searchsorted(ends, t, side="left")), len(self.segments) - 1)
        return i, t - self.breakpoints[i]

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        i, tau = self.locate(t)
        return self.segments[i].eval(tau, order)

    def sample(self, rate: float) -> np.ndarray:
        """
        Rows of (t, x, y, z, vx, vy, vz, ax, ay, az) at ``rate`` Hz, final time included.
        """
        if rate <= 0:
            raise ValueError("Sample rate must be positive")
        n = int(np.floor(self.total_duration * rate)) + 1
        times = np.arange(n) / rate
        if times[-1] < self.total_duration:
            times = np.append(times, self.total_duration)
        rows = [np.concatenate([[t], self.eval(t, 0), self.eval(t, 1), self.eval(t, 2)]) for t in times]
        return np.array(rows)

    def continuity_error(self, max_order: int) -> float:
        """Largest jump over all junctions in derivatives 0..max_order."""
        err = 0.0
        for left, right in zip(self.segments[:-1], self.segments[1:]):
            for k in range(max_order + 1):
                err = max(err, float(np.abs(left.eval(left.duration, k) - right.eval(0.0, k)).max()))
        return err


def eval(traj: PiecewiseTrajectory, t: float, order: int = 0) -> np.ndarray:
    return traj.eval(t, order)


def control_cost(traj: PiecewiseTrajectory, kappa: int) -> float:
    """Exact ``int ||sigma^(kappa)(t)||^2 dt`` through per-segment Gram matrices."""
    cost = 0.0
    for seg in traj.segments:
        gram = gram_matrix(seg.duration, seg.degree, kappa)
        cost += float(np.einsum("ja,jk,ka->", seg.coeffs, gram, seg.coeffs))
    return max(cost, 0.0)


def export_trajectory(traj: PiecewiseTrajectory, path: Union[str, Path], rate: float = 100.0) -> Path:
    """Write sampled states as CSV lines for plotting."""
    import pandas as pd

    columns = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"]
    path = Path(path)
    pd.DataFrame(traj.sample(rate), columns=columns).to_csv(path, index=False, float_format="%.9g")
    return path
