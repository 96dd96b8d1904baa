"""End-to-end tests: dataset, training, planning with trained networks"""

import numpy as np
import pandas as pd
import pytest
import torch

from allocnet import AllocNet
from allocnet.scripts.cli import main
from allocnet.scripts.train import train
from allocnet.utils.AI_utils import ALPHA_ABLATION, TrainingConfig, check_records, iterate_batches
from allocnet.utils.corridor import GeneratorConfig
from allocnet.utils.dataset import generate_dataset, save_dataset
from allocnet.utils.metrics import verify_trajectory
from allocnet.utils.model_loader import save_model
from allocnet.utils.models.AllocNet_MLP import AllocNet_MLP, predict_segments
from allocnet.utils.qp_solver import SolverSettings

T_STAR = (3600.0 / 17.5) ** (1 / 6)


def constant_model(duration=None, stop_logit=0.0):
    """Network whose outputs ignore the input: softplus^-1(duration) and the given stop logit."""
    model = AllocNet_MLP(layers=(8,))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        if duration is not None:
            model.head.bias[:3] = float(np.log(np.expm1(duration)))
        model.head.bias[3:] = stop_logit
    return model


@pytest.fixture(scope="module")
def records():
    return generate_dataset(seed=1, count=6, generator_config=GeneratorConfig(num_segments_range=(1, 2), m_max=3))


def planner(model):
    return AllocNet(model, device="cpu", solver_settings=SolverSettings(time_budget_ms=None), verbosity=0)


class TestPlanner:
    """AllocNet.infer and AllocNet.plan"""

    def test_length_miss_is_truncated_and_rescued(self, unit_move):
        with pytest.warns(UserWarning):
            result = planner(constant_model()).infer(unit_move)
        assert result.predicted_segments == 3
        assert result.length_miss
        assert result.scalings == 2
        assert result.allocation.durations[0] == pytest.approx(np.log(2.0) * 1.44)
        assert verify_trajectory(result.trajectory, unit_move)

    def test_strict_length(self, unit_move):
        result = planner(constant_model()).infer(unit_move, strict_length=True)
        assert not result.success
        assert result.cost == float("inf")

    def test_exact_prediction(self, unit_move):
        result = planner(constant_model(T_STAR, stop_logit=5.0)).infer(unit_move)
        assert result.success and not result.length_miss and result.scalings == 0
        assert result.cost == pytest.approx(720 / T_STAR ** 5 + 17.5 * T_STAR, rel=1e-5)

    def test_ensemble_keeps_cheapest(self, unit_move):
        ensemble = planner([constant_model(), constant_model(T_STAR, stop_logit=5.0)])
        with pytest.warns(UserWarning):
            result = ensemble.plan(unit_move)
        assert result.model_index == 1
        assert result.success

    def test_wrong_kappa(self):
        from tests.conftest import box_instance

        with pytest.raises(ValueError):
            planner(constant_model()).predict(box_instance(kappa=4))

    def test_threshold_monotonicity(self, records):
        torch.manual_seed(3)
        net = planner(AllocNet_MLP(layers=(16,)))
        outputs = [net.predict(r.instance) for r in records]
        counts, totals = [], []
        for alpha in ALPHA_ABLATION:
            segments = [predict_segments(stop_probs, alpha) for _, stop_probs in outputs]
            counts.append(np.mean(segments))
            totals.append(np.mean([durations[:m].sum() for (durations, _), m in zip(outputs, segments)]))
        assert np.all(np.diff(counts) >= 0)
        assert np.all(np.diff(totals) >= 0)

    def test_model_file_and_export(self, unit_move, tmp_path):
        path = save_model(constant_model(T_STAR, stop_logit=5.0), tmp_path / "model.json")
        from_file = planner(str(path))
        result = from_file.plan(unit_move)
        out = from_file.export_trajectory(result, tmp_path / "traj.csv", rate=10)
        assert pd.read_csv(out)["t"].iloc[-1] == pytest.approx(result.allocation.total)


class TestTraining:
    """Training loop"""

    def test_batches(self, records):
        generator = torch.Generator().manual_seed(0)
        batches = list(iterate_batches(records, 4, shuffle=True, generator=generator))
        assert [len(b) for b in batches] == [4, 2]
        assert sorted(id(r) for b in batches for r in b) == sorted(id(r) for r in records)

    def test_config_checks(self, records):
        with pytest.raises(ValueError):
            check_records(records, TrainingConfig(m_max=2))
        with pytest.raises(ValueError):
            check_records(records, TrainingConfig(w_t=1.0))
        with pytest.raises(ValueError):
            TrainingConfig(alpha=0.0)
        with pytest.raises(NotImplementedError):
            TrainingConfig(loss_mode="weighted")

    def test_deterministic(self, records, tmp_path):
        config = TrainingConfig(epochs=2, batch_size=4, hidden=(8,), validation_fraction=0.0, on_cluster=True)
        model_a, log_a = train(records, config, device="cpu", output_path=tmp_path / "a", verbose=False)
        model_b, log_b = train(records, config, device="cpu", output_path=tmp_path / "b", verbose=False)
        assert len(log_a) == 2
        assert np.all(np.isfinite(log_a["train_loss"]))
        np.testing.assert_array_equal(log_a["train_loss"], log_b["train_loss"])
        for x, y in zip(model_a.parameters(), model_b.parameters()):
            assert torch.equal(x, y)
        for name in ("model.json", "training_log.csv", "training_plot.png"):
            assert (tmp_path / "a" / name).exists()

    def test_command(self, records, tmp_path):
        data = save_dataset(records, tmp_path / "data.jsonl")
        run = tmp_path / "run"
        assert main(["train", "-d_p", str(data), "-o_p", str(run), "-e", "1", "-bs", "4", "-layers", "[8]",
                     "-val", "0.2", "-serial", "-verbosity", "0"]) == 0
        assert (run / "model.json").exists()
        assert (run / "experiment_log.csv").exists()
        assert (run / "command.txt").exists()

        bench = tmp_path / "bench"
        assert main(["bench", "-d", str(data), "-methods", "allocnet:0.5,allocnet:0.75", "-m", str(run / "model.json"),
                     "-o", str(bench), "-device", "cpu", "-serial", "-verbosity", "0"]) == 0
        summary = pd.read_csv(bench / "bench_summary.csv")
        assert list(summary["method"]) == ["allocnet:0.5", "allocnet:0.75"]
        assert (summary["instances"] == 6).all()

    def test_loss_decreases(self):
        records = generate_dataset(seed=7, count=200)
        config = TrainingConfig(epochs=20, hidden=(64, 64), on_cluster=True)
        _, log = train(records, config, device="cpu", verbose=False)
        losses = log["train_loss"].to_numpy()
        assert losses[-5:].mean() < losses[:5].mean()
        assert log["token_accuracy"].iloc[-1] >= 0.9
        assert log["lr"].iloc[0] == pytest.approx(config.lr)
        assert np.all(np.diff(log["lr"]) <= 0)
