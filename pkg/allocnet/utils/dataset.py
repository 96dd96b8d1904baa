"""
Synthetic dataset of corridor instances labelled with reference time allocations, and the
line-delimited JSON formats used for datasets and single instances.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from tqdm.auto import tqdm

from allocnet.utils.corridor import (CorridorSequence, GeneratorConfig, HPolytope, PaddedCorridorTensor,
                                     chebyshev_center, generate_corridor_sequence, pad)
from allocnet.utils.qp_builder import ProblemInstance
from allocnet.utils.time_opt import TimeAllocation, reference_time, rescue

DEFAULT_D_M = (4.0, 6.0, 8.0)  # v_max, a_max, j_max


class PolytopeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    normals: List[List[float]]
    offsets: List[float]

    @model_validator(mode="after")
    def check_faces(self):
        if len(self.normals) != len(self.offsets) or not self.normals:
            raise ValueError("normals and offsets must be non-empty and of equal length")
        for row in self.normals:
            if len(row) != 3:
                raise ValueError("every normal must have three components")
            if abs(float(np.linalg.norm(row)) - 1.0) > 1e-6:
                raise ValueError("normals must be unit length")
        return self


class InstanceSchema(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    kappa: int
    degree: int
    corridors: List[PolytopeSchema]
    q0: List[List[float]]
    qf: List[List[float]]
    d_m: List[float]
    n_res: int
    w_t: float

    @field_validator("kappa")
    @classmethod
    def check_kappa(cls, value):
        if value not in (3, 4):
            raise ValueError("kappa must be 3 or 4")
        return value

    @model_validator(mode="after")
    def check_degree(self):
        if self.degree != 2 * self.kappa - 1:
            raise ValueError(f"degree must be 2 * kappa - 1 = {2 * self.kappa - 1}")
        return self


class RecordSchema(InstanceSchema):
    m_max: int
    f_max: int
    t_bar: List[float]
    s_bar: List[float]
    feasible_at_reference: bool


@dataclass(frozen=True)
class DatasetRecord:
    instance: ProblemInstance
    padded: PaddedCorridorTensor
    t_bar: TimeAllocation
    feasible_at_reference: bool

    def __post_init__(self):
        m = self.instance.num_segments
        if len(self.t_bar) != m:
            raise ValueError(f"Reference allocation has {len(self.t_bar)} entries for {m} segments")
        if self.padded.num_segments != m:
            raise ValueError(f"Stop targets encode {self.padded.num_segments} segments, instance has {m}")


def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "kappa": instance.kappa,
        "degree": instance.degree,
        "corridors": [{"normals": p.normals.tolist(), "offsets": p.offsets.tolist()}
                      for p in instance.corridors.polytopes],
        "q0": instance.q0.tolist(),
        "qf": instance.qf.tolist(),
        "d_m": instance.d_m.tolist(),
        "n_res": instance.n_res,
        "w_t": instance.w_t,
    }


def _instance_from_schema(schema: InstanceSchema) -> ProblemInstance:
    polytopes = []
    for i, p in enumerate(schema.corridors):
        poly = HPolytope(np.array(p.normals), np.array(p.offsets))
        center, radius = chebyshev_center(poly.normals, poly.offsets)
        if center is None or radius <= 0:
            raise ValueError(f"Corridor {i} is empty or unbounded")
        polytopes.append(poly)
    return ProblemInstance(corridors=CorridorSequence(tuple(polytopes)), q0=np.array(schema.q0),
                           qf=np.array(schema.qf), d_m=np.array(schema.d_m), n_res=schema.n_res,
                           w_t=schema.w_t, kappa=schema.kappa)


def instance_from_dict(data: dict) -> ProblemInstance:
    return _instance_from_schema(InstanceSchema.model_validate(data))


def record_to_dict(record: DatasetRecord) -> dict:
    data = instance_to_dict(record.instance)
    data.update({
        "m_max": record.padded.m_max,
        "f_max": record.padded.f_max,
        "t_bar": record.t_bar.durations.tolist(),
        "s_bar": record.padded.stop_targets.tolist(),
        "feasible_at_reference": bool(record.feasible_at_reference),
    })
    return data


def record_from_dict(data: dict) -> DatasetRecord:
    schema = RecordSchema.model_validate(data)
    instance = _instance_from_schema(schema)
    padded = pad(instance.corridors, f_max=schema.f_max, m_max=schema.m_max)
    if not np.array_equal(np.asarray(schema.s_bar), padded.stop_targets):
        raise ValueError(f"s_bar {schema.s_bar} does not match {instance.num_segments} segments "
                         f"padded to {schema.m_max}")
    return DatasetRecord(instance, padded, TimeAllocation(np.array(schema.t_bar)), schema.feasible_at_reference)


def _write_lines(items: Sequence[dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for item in items:
            f.write(json.dumps(item) + "\n")
    return path


def _read_lines(path: Union[str, Path], parse) -> list:
    path = Path(path)
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except ValueError as e:
                raise ValueError(f"{path}, line {lineno}: {e}") from e
    return out


def save_dataset(records: Sequence[DatasetRecord], path: Union[str, Path]) -> Path:
    return _write_lines([record_to_dict(r) for r in records], path)


def load_dataset(path: Union[str, Path]) -> List[DatasetRecord]:
    return _read_lines(path, record_from_dict)


def save_instances(instances: Sequence[ProblemInstance], path: Union[str, Path]) -> Path:
    return _write_lines([instance_to_dict(i) for i in instances], path)


def load_instances(path: Union[str, Path]) -> List[ProblemInstance]:
    return _read_lines(path, instance_from_dict)


def make_record(seed: int, generator_config: GeneratorConfig, kappa: int = 3, d_m: Sequence[float] = DEFAULT_D_M,
                n_res: int = 20, w_t: float = 17.5, f_max: int = 6, num_segments: Optional[int] = None) -> DatasetRecord:
    """One rest-to-rest record: corridor chain, reference time and its feasibility after rescue."""
    corridors, path = generate_corridor_sequence(seed, generator_config, num_segments=num_segments)
    instance = ProblemInstance.rest_to_rest(corridors, path[0], path[-1], d_m, kappa=kappa, n_res=n_res, w_t=w_t)
    t_ref = reference_time(instance)
    rescued, _, _ = rescue(instance, t_ref.durations)
    feasible = rescued is not None
    t_bar = rescued if feasible else t_ref
    return DatasetRecord(instance, pad(corridors, f_max=f_max, m_max=generator_config.m_max), t_bar, feasible)


def record_seeds(seed: int, count: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_dataset(seed: int, count: int, generator_config: Optional[GeneratorConfig] = None, kappa: int = 3,
                     d_m: Sequence[float] = DEFAULT_D_M, n_res: int = 20, w_t: float = 17.5, f_max: int = 6,
                     num_workers: int = 0, verbose: bool = False) -> List[DatasetRecord]:
    """
    Generate ``count`` records, each from its own seed derived from ``seed``. The result
    does not depend on ``num_workers``.
    """
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    generator_config = generator_config or GeneratorConfig()
    seeds = record_seeds(seed, count)

    def job(s):
        return make_record(s, generator_config, kappa, d_m, n_res, w_t, f_max)

    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            records = list(tqdm(pool.map(job, seeds), total=count, disable=not verbose))
    else:
        records = [job(s) for s in tqdm(seeds, disable=not verbose)]

    if verbose:
        feasible = sum(r.feasible_at_reference for r in records)
        print(f"Generated {count} records, {feasible} feasible at the reference allocation")
    return records


def records_to_tensors(records: Sequence[DatasetRecord]) -> Tuple["torch.Tensor", "torch.Tensor", "torch.Tensor"]:
    """Batch the padded corridors and boundary states as float64 tensors."""
    import torch

    corridors = torch.as_tensor(np.stack([r.padded.data for r in records]), dtype=torch.float64)
    q0 = torch.as_tensor(np.stack([r.instance.q0 for r in records]), dtype=torch.float64)
    qf = torch.as_tensor(np.stack([r.instance.qf for r in records]), dtype=torch.float64)
    return corridors, q0, qf


def split_records(records: Sequence[DatasetRecord], validation_fraction: float, seed: int
                  ) -> Tuple[List[DatasetRecord], List[DatasetRecord]]:
    """Deterministic shuffled train/validation split. At least one record stays in training."""
    if not 0 <= validation_fraction < 1:
        raise ValueError("validation_fraction must lie in [0, 1)")
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = min(int(round(validation_fraction * len(records))), max(len(records) - 1, 0))
    val_idx = set(order[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


def padded_for_instance(instance: ProblemInstance, m_max: int, f_max: int) -> PaddedCorridorTensor:
    return pad(instance.corridors, f_max=f_max, m_max=m_max)


def load_problems(path: Union[str, Path]) -> List[ProblemInstance]:
    """Instances from either a dataset file or an instance file, told apart by the first record."""
    path = Path(path)
    with open(path) as f:
        first = next((line for line in f if line.strip()), None)
    if first is None:
        return []
    try:
        is_dataset = "t_bar" in json.loads(first)
    except (ValueError, TypeError):
        is_dataset = False
    if is_dataset:
        return [r.instance for r in load_dataset(path)]
    return load_instances(path)
