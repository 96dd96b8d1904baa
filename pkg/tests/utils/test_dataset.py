"""Tests for allocnet.utils.dataset"""

import json
import operator

import numpy as np
import pytest

from allocnet.utils.corridor import GeneratorConfig
from allocnet.utils.dataset import (generate_dataset, instance_from_dict, instance_to_dict, load_dataset,
                                    load_instances, load_problems, records_to_tensors, save_dataset, save_instances,
                                    split_records)
from allocnet.utils.qp_solver import SolverSettings
from allocnet.utils.time_opt import solve_at

MUTATIONS = {
    "missing_field": lambda d: d.pop("t_bar"),
    "unknown_field": lambda d: d.update(colour="red"),
    "bad_kappa": lambda d: d.update(kappa=5),
    "text_weight": lambda d: d.update(w_t="fast"),
    "nan_weight": lambda d: d.update(w_t=float("nan")),
    "long_normal": lambda d: operator.setitem(d["corridors"][0]["normals"][0], 0, 2.0),
    "extra_offset": lambda d: d["corridors"][0]["offsets"].append(1.0),
    "extra_duration": lambda d: d["t_bar"].append(1.0),
    "zero_duration": lambda d: operator.setitem(d["t_bar"], 0, 0.0),
    "flipped_stop": lambda d: operator.setitem(d["s_bar"], 0, 1.0 - d["s_bar"][0]),
    "coarse_sampling": lambda d: d.update(n_res=1),
    "text_flag": lambda d: d.update(feasible_at_reference="maybe"),
}


@pytest.fixture(scope="module")
def records():
    return generate_dataset(seed=3, count=4, generator_config=GeneratorConfig(num_segments_range=(1, 2), m_max=3))


class TestFiles:
    """Line-delimited JSON datasets and instance files"""

    def test_dataset_round_trip(self, records, tmp_path):
        path = save_dataset(records, tmp_path / "data.jsonl")
        loaded = load_dataset(path)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            np.testing.assert_array_equal(a.t_bar.durations, b.t_bar.durations)
            np.testing.assert_array_equal(a.padded.data, b.padded.data)
            assert a.feasible_at_reference == b.feasible_at_reference

    def test_instance_dict_round_trip(self, unit_move):
        rebuilt = instance_from_dict(instance_to_dict(unit_move))
        np.testing.assert_array_equal(rebuilt.q0, unit_move.q0)
        np.testing.assert_array_equal(rebuilt.d_m, unit_move.d_m)
        assert rebuilt.kappa == unit_move.kappa

    def test_unknown_field_reports_line(self, unit_move, tmp_path):
        path = save_instances([unit_move, unit_move], tmp_path / "instances.jsonl")
        lines = path.read_text().splitlines()
        data = json.loads(lines[1])
        data["colour"] = "red"
        path.write_text(lines[0] + "\n" + json.dumps(data) + "\n")
        with pytest.raises(ValueError, match="line 2"):
            load_instances(path)

    def test_truncated_line(self, unit_move, tmp_path):
        path = save_instances([unit_move], tmp_path / "instances.jsonl")
        path.write_text(path.read_text()[:40])
        with pytest.raises(ValueError, match="line 1"):
            load_instances(path)

    def test_degree_must_match_kappa(self, unit_move):
        data = instance_to_dict(unit_move)
        data["degree"] = 7
        with pytest.raises(ValueError):
            instance_from_dict(data)

    def test_load_problems_reads_both_formats(self, records, unit_move, tmp_path):
        dataset = save_dataset(records, tmp_path / "data.jsonl")
        instances = save_instances([unit_move], tmp_path / "instances.jsonl")
        assert len(load_problems(dataset)) == len(records)
        assert len(load_problems(instances)) == 1

    @pytest.mark.parametrize("mutation", sorted(MUTATIONS))
    def test_mutated_line_reports_line(self, records, tmp_path, mutation):
        path = save_dataset(records, tmp_path / "data.jsonl")
        lines = path.read_text().splitlines()
        data = json.loads(lines[2])
        MUTATIONS[mutation](data)
        lines[2] = json.dumps(data)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 3"):
            load_dataset(path)

    def test_feasible_records_resolve_after_load(self, records, tmp_path):
        loaded = load_dataset(save_dataset(records, tmp_path / "data.jsonl"))
        feasible = [r for r in loaded if r.feasible_at_reference]
        assert feasible
        for r in feasible:
            _, sol = solve_at(r.instance, r.t_bar.durations, SolverSettings(time_budget_ms=None))
            assert sol.optimal


class TestGeneration:
    """Seeded dataset generation"""

    def test_byte_identical(self, records, tmp_path):
        again = generate_dataset(seed=3, count=4, generator_config=GeneratorConfig(num_segments_range=(1, 2), m_max=3))
        a = save_dataset(records, tmp_path / "a.jsonl")
        b = save_dataset(again, tmp_path / "b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_workers_do_not_change_output(self, records, tmp_path):
        threaded = generate_dataset(seed=3, count=4, num_workers=2,
                                    generator_config=GeneratorConfig(num_segments_range=(1, 2), m_max=3))
        a = save_dataset(records, tmp_path / "a.jsonl")
        b = save_dataset(threaded, tmp_path / "b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_records_are_consistent(self, records):
        for r in records:
            assert 1 <= r.instance.num_segments <= 2
            assert len(r.t_bar) == r.instance.num_segments
            assert r.padded.data.shape == (3, 6, 4)

    def test_negative_count(self):
        with pytest.raises(ValueError):
            generate_dataset(seed=0, count=-1)

    def test_tensors(self, records):
        corridors, q0, qf = records_to_tensors(records)
        assert tuple(corridors.shape) == (4, 3, 6, 4)
        assert tuple(q0.shape) == (4, 3, 3)
        assert str(qf.dtype) == "torch.float64"

    def test_split(self, records):
        train, val = split_records(records, 0.25, seed=0)
        assert len(train) == 3 and len(val) == 1
        assert split_records(records, 0.25, seed=0)[1][0] is val[0]
        with pytest.raises(ValueError):
            split_records(records, 1.0, seed=0)
