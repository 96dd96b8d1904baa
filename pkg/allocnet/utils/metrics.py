from collections import namedtuple
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from allocnet.utils.polynomial import PiecewiseTrajectory, control_cost
from allocnet.utils.qp_builder import ProblemInstance

SAFETY_TOLERANCE = 1e-6

BenchRow = namedtuple('BenchRow', [
    'method', 'dataset', 'min_control', 'traj_time', 'comp_time_ms', 'success_rate', 'instances'])

InstanceResult = namedtuple('InstanceResult', [
    'method', 'dataset', 'instance', 'success', 'min_control', 'traj_time', 'comp_time_ms',
    'segments', 'length_miss', 'scalings', 'status'])


def _check_is_equal(rows1: Sequence[BenchRow], rows2: Sequence[BenchRow], skip=('comp_time_ms',)):
    assert len(rows1) == len(rows2), "Row count mismatch"
    for r1, r2 in zip(rows1, rows2):
        for k, v1 in r1._asdict().items():
            if k in skip:
                continue
            v2 = r2._asdict()[k]
            if isinstance(v1, float) and np.isnan(v1):
                assert np.isnan(v2), f"Mismatch in {k}: {v1} vs {v2}"
            else:
                assert v1 == v2, f"Mismatch in {k}: {v1} vs {v2}"


def constraint_violations(traj: PiecewiseTrajectory, instance: ProblemInstance) -> Dict[str, float]:
    """
    Worst violation of every constraint family, recomputed from the polynomial coefficients
    without the QP matrices. Positive values are violations.
    """
    kappa = instance.kappa
    if len(traj.segments) != instance.num_segments:
        raise ValueError(f"Trajectory has {len(traj.segments)} segments, instance has {instance.num_segments}")
    if traj.degree != instance.degree:
        raise ValueError(f"Trajectory degree {traj.degree} does not match {instance.degree}")

    fractions = np.arange(instance.n_res + 1) / instance.n_res
    corridor, bounds = -np.inf, -np.inf
    for seg, poly in zip(traj.segments, instance.corridors.polytopes):
        for f in fractions:
            tau = f * seg.duration
            corridor = max(corridor, float(np.max(poly.normals @ seg.eval(tau, 0) - poly.offsets)))
            for k in range(1, kappa):
                bounds = max(bounds, float(np.max(np.abs(seg.eval(tau, k)) - instance.d_m[k - 1])))

    first, last = traj.segments[0], traj.segments[-1]
    boundary = max(max(float(np.abs(first.eval(0.0, k) - instance.q0[:, k]).max()),
                       float(np.abs(last.eval(last.duration, k) - instance.qf[:, k]).max()))
                   for k in range(kappa))
    return {"corridor": corridor, "derivative": bounds, "boundary": boundary,
            "continuity": traj.continuity_error(kappa - 1)}


def verify_trajectory(traj: Optional[PiecewiseTrajectory], instance: ProblemInstance,
                      tol: float = SAFETY_TOLERANCE) -> bool:
    """Sampled corridor and derivative bounds, boundary states and junction continuity, all within ``tol``."""
    if traj is None:
        return False
    violations = constraint_violations(traj, instance)
    return all(np.isfinite(v) and v <= tol for v in violations.values())


def trajectory_summary(traj: PiecewiseTrajectory, kappa: int) -> Tuple[float, float]:
    """(control cost, total time)."""
    return control_cost(traj, kappa), traj.total_duration


def summarize(results: Sequence[InstanceResult]) -> List[BenchRow]:
    """
    One row per (method, dataset) in first-seen order. Cost, trajectory time and computation
    time are averaged over successful instances only; NaN when nothing succeeded.
    """
    groups: Dict[Tuple[str, str], List[InstanceResult]] = {}
    for r in results:
        groups.setdefault((r.method, r.dataset), []).append(r)

    rows = []
    for (method, dataset), items in groups.items():
        ok = [r for r in items if r.success]

        def mean(key):
            return float(np.mean([getattr(r, key) for r in ok])) if ok else float("nan")

        rows.append(BenchRow(method=method, dataset=dataset, min_control=mean("min_control"),
                             traj_time=mean("traj_time"), comp_time_ms=mean("comp_time_ms"),
                             success_rate=len(ok) / len(items), instances=len(items)))
    return rows
