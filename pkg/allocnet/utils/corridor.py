"""
Half-space corridors, synthetic corridor chains and fixed-size padding for the network input.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

F_MAX = 50  # hard limit on faces per polytope
NORMAL_TOLERANCE = 1e-9


class CorridorGenerationError(RuntimeError):
    pass


def chebyshev_center(normals: np.ndarray, offsets: np.ndarray) -> Tuple[Optional[np.ndarray], float]:
    """
    Center and radius of the largest ball inside ``{x : normals @ x <= offsets}``.

    :return: ``(center, radius)``; ``(None, 0.0)`` when the set is empty or unbounded.
    """
    from scipy.optimize import linprog

    norms = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([normals, norms[:, None]])
    res = linprog(c=[0.0, 0.0, 0.0, -1.0], A_ub=a_ub, b_ub=offsets,
                  bounds=[(None, None)] * 3 + [(0.0, None)], method="highs")
    if res.status != 0:
        return None, 0.0
    return res.x[:3], float(res.x[3])


@dataclass(frozen=True)
class HPolytope:
    """
    Convex set ``{x : normals @ x <= offsets}``. Rows are scaled to unit normals on construction.
    """
    normals: np.ndarray  # (F, 3)
    offsets: np.ndarray  # (F,)

    def __post_init__(self):
        normals = np.array(self.normals, dtype=float).reshape(-1, 3)
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError(f"Got {normals.shape[0]} normals but {offsets.shape[0]} offsets")
        if normals.shape[0] == 0:
            raise ValueError("A polytope needs at least one face")
        if normals.shape[0] > F_MAX:
            raise ValueError(f"Polytope has {normals.shape[0]} faces, the limit is {F_MAX}")
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise ValueError("Polytope data must be finite")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("Face normals must be nonzero")
        # rows already unit length are kept bit-for-bit
        norms = np.where(np.abs(norms - 1.0) > 1e-12, norms, 1.0)
        normals = normals / norms[:, None]
        offsets = offsets / norms
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_box(cls, lower: Sequence[float], upper: Sequence[float]) -> "HPolytope":
        """Axis-aligned box as six half-spaces ordered +x, -x, +y, -y, +z, -z."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        normals = np.zeros((6, 3))
        offsets = np.zeros(6)
        for axis in range(3):
            normals[2 * axis, axis] = 1.0
            normals[2 * axis + 1, axis] = -1.0
            offsets[2 * axis] = upper[axis]
            offsets[2 * axis + 1] = -lower[axis]
        return cls(normals, offsets)

    @property
    def num_faces(self) -> int:
        return self.normals.shape[0]

    def contains(self, point: Sequence[float], slack: float = 0.0) -> bool:
        return contains(self, point, slack)


def contains(poly: HPolytope, point: Sequence[float], slack: float = 0.0) -> bool:
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    return bool(np.all(poly.normals @ np.asarray(point, dtype=float) <= poly.offsets + slack))


def overlap_witness(a: HPolytope, b: HPolytope, min_radius: float = 1e-9) -> Optional[np.ndarray]:
    """Chebyshev center of ``a ∩ b``, or None when the intersection has no interior."""
    center, radius = chebyshev_center(np.vstack([a.normals, b.normals]),
                                      np.concatenate([a.offsets, b.offsets]))
    if center is None or radius <= min_radius:
        return None
    return center


def overlap_radius(a: HPolytope, b: HPolytope) -> float:
    _, radius = chebyshev_center(np.vstack([a.normals, b.normals]),
                                 np.concatenate([a.offsets, b.offsets]))
    return radius


@dataclass(frozen=True)
class CorridorSequence:
    polytopes: Tuple[HPolytope, ...]

    def __post_init__(self):
        polytopes = tuple(self.polytopes)
        if len(polytopes) < 1:
            raise ValueError("A corridor sequence needs at least one polytope")
        object.__setattr__(self, "polytopes", polytopes)
        for i in range(len(polytopes) - 1):
            if overlap_witness(polytopes[i], polytopes[i + 1]) is None:
                raise ValueError(f"Corridors {i} and {i + 1} do not overlap")

    def __len__(self) -> int:
        return len(self.polytopes)

    def __getitem__(self, i: int) -> HPolytope:
        return self.polytopes[i]

    @property
    def num_segments(self) -> int:
        return len(self.polytopes)

    def witnesses(self) -> np.ndarray:
        """Overlap witness of every consecutive pair, shape (M-1, 3)."""
        points = [overlap_witness(a, b) for a, b in zip(self.polytopes[:-1], self.polytopes[1:])]
        return np.array(points).reshape(-1, 3)


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic overlapping-box corridor generator."""
    num_segments_range: Tuple[int, int] = (1, 3)
    edge_range: Tuple[float, float] = (1.5, 4.0)
    overlap_fraction_range: Tuple[float, float] = (0.2, 0.5)
    workspace_half_extent: Tuple[float, float, float] = (6.25, 6.25, 2.5)
    min_inradius: float = 0.1
    endpoint_margin: float = 0.15  # fraction of the box edge kept clear around start/goal
    max_retries: int = 100
    m_max: int = 3

    def __post_init__(self):
        lo, hi = self.num_segments_range
        if not 1 <= lo <= hi:
            raise ValueError(f"Invalid segment range {self.num_segments_range}")
        if hi > self.m_max:
            raise ValueError(f"Segment range {self.num_segments_range} exceeds m_max={self.m_max}")
        if not 0 < self.edge_range[0] <= self.edge_range[1]:
            raise ValueError(f"Invalid edge range {self.edge_range}")
        if not 0 < self.overlap_fraction_range[0] <= self.overlap_fraction_range[1] < 1:
            raise ValueError(f"Invalid overlap fraction range {self.overlap_fraction_range}")
        if not 0 <= self.endpoint_margin < 0.5:
            raise ValueError("endpoint_margin must lie in [0, 0.5)")
        if min(self.workspace_half_extent) * 2 < self.edge_range[1]:
            raise ValueError("Workspace is smaller than the largest box edge")


def _next_box(rng: np.random.Generator, center: np.ndarray, edges: np.ndarray, previous_direction,
              config: GeneratorConfig):
    new_edges = rng.uniform(*config.edge_range, size=3)
    axis = int(rng.integers(3))
    sign = float(rng.choice([-1.0, 1.0]))
    if previous_direction is not None and previous_direction[0] == axis and previous_direction[1] == -sign:
        sign = -sign  # never fold back into the previous box
    fraction = rng.uniform(*config.overlap_fraction_range)
    new_center = center.copy()
    shared = np.minimum(edges, new_edges)
    new_center[axis] += sign * (0.5 * (edges[axis] + new_edges[axis]) - fraction * shared[axis])
    for other in range(3):
        if other != axis:
            new_center[other] += rng.uniform(-0.25, 0.25) * shared[other]
    return new_center, new_edges, (axis, sign)


def _inside_workspace(center: np.ndarray, edges: np.ndarray, config: GeneratorConfig) -> bool:
    half = np.asarray(config.workspace_half_extent)
    return bool(np.all(np.abs(center) + 0.5 * edges <= half))


def generate_corridor_sequence(seed: int, config: GeneratorConfig = None,
                               num_segments: Optional[int] = None) -> Tuple[CorridorSequence, np.ndarray]:
    """
    Random chain of overlapping axis-aligned boxes inside the workspace.

    :return: The corridor sequence and its seed path: start, the overlap witnesses, goal.
    """
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    if num_segments is None:
        num_segments = int(rng.integers(config.num_segments_range[0], config.num_segments_range[1] + 1))
    if not 1 <= num_segments <= config.m_max:
        raise ValueError(f"Requested {num_segments} segments, must be in [1, {config.m_max}]")

    half = np.asarray(config.workspace_half_extent)
    for _ in range(config.max_retries):
        edges = rng.uniform(*config.edge_range, size=3)
        center = rng.uniform(-(half - 0.5 * edges), half - 0.5 * edges)
        boxes = [(center, edges)]
        direction = None
        ok = True
        for _ in range(num_segments - 1):
            for _ in range(config.max_retries):
                cand_center, cand_edges, cand_direction = _next_box(rng, boxes[-1][0], boxes[-1][1], direction, config)
                if not _inside_workspace(cand_center, cand_edges, config):
                    continue
                a = HPolytope.from_box(boxes[-1][0] - 0.5 * boxes[-1][1], boxes[-1][0] + 0.5 * boxes[-1][1])
                b = HPolytope.from_box(cand_center - 0.5 * cand_edges, cand_center + 0.5 * cand_edges)
                if overlap_radius(a, b) >= config.min_inradius:
                    break
            else:
                ok = False
                break
            boxes.append((cand_center, cand_edges))
            direction = cand_direction
        if not ok:
            continue

        polytopes = tuple(HPolytope.from_box(c - 0.5 * e, c + 0.5 * e) for c, e in boxes)
        margin = config.endpoint_margin
        start = rng.uniform(boxes[0][0] - (0.5 - margin) * boxes[0][1], boxes[0][0] + (0.5 - margin) * boxes[0][1])
        goal = rng.uniform(boxes[-1][0] - (0.5 - margin) * boxes[-1][1], boxes[-1][0] + (0.5 - margin) * boxes[-1][1])
        sequence = CorridorSequence(polytopes)
        path = np.vstack([start, sequence.witnesses(), goal])
        return sequence, path

    raise CorridorGenerationError(f"Could not generate a corridor chain of length {num_segments} "
                                  f"after {config.max_retries} retries (seed {seed})")


@dataclass(frozen=True)
class PaddedCorridorTensor:
    """
    Network input: ``data[i, f] = (unit normal, offset)`` of face f of polytope i, zero padded.
    ``stop_targets[i] = 1`` from the last real slot onwards.
    """
    data: np.ndarray  # (m_max, f_max, 4)
    stop_targets: np.ndarray = field(default=None)  # (m_max,)

    @property
    def m_max(self) -> int:
        return self.data.shape[0]

    @property
    def f_max(self) -> int:
        return self.data.shape[1]

    @property
    def num_segments(self) -> int:
        return int(np.argmax(self.stop_targets > 0.5)) + 1


def stop_targets(num_segments: int, m_max: int) -> np.ndarray:
    targets = np.zeros(m_max)
    targets[num_segments - 1:] = 1.0
    return targets


def pad(seq: CorridorSequence, f_max: int = F_MAX, m_max: int = 3) -> PaddedCorridorTensor:
    if len(seq) > m_max:
        raise ValueError(f"Corridor sequence has {len(seq)} polytopes, more than m_max={m_max}")
    data = np.zeros((m_max, f_max, 4))
    for i, poly in enumerate(seq.polytopes):
        if poly.num_faces > f_max:
            raise ValueError(f"Polytope {i} has {poly.num_faces} faces, more than f_max={f_max}")
        data[i, :poly.num_faces, :3] = poly.normals
        data[i, :poly.num_faces, 3] = poly.offsets
    return PaddedCorridorTensor(data, stop_targets(len(seq), m_max))


def unpad(tensor: PaddedCorridorTensor) -> CorridorSequence:
    """Inverse of :func:`pad` for the real slots."""
    polytopes = []
    for i in range(tensor.num_segments):
        rows = tensor.data[i]
        keep = np.linalg.norm(rows[:, :3], axis=1) > 0
        polytopes.append(HPolytope(rows[keep, :3], rows[keep, 3]))
    return CorridorSequence(tuple(polytopes))
