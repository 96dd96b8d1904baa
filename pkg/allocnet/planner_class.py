import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from allocnet.utils.models.AllocNet_MLP import AllocNet_MLP, predict_segments
from allocnet.utils.polynomial import PiecewiseTrajectory
from allocnet.utils.qp_builder import T_MIN, ProblemInstance
from allocnet.utils.qp_solver import SolverSettings
from allocnet.utils.time_opt import TimeAllocation, rescue, solve_at


@dataclass
class PlanResult:
    trajectory: Optional[PiecewiseTrajectory]
    allocation: Optional[TimeAllocation]
    predicted_segments: int
    length_miss: bool
    scalings: int  # temporal rescalings applied after an infeasible first solve
    inference_time: float  # seconds spent in the network
    solve_time: float  # seconds spent assembling and solving QPs
    cost: float = float("inf")  # control cost plus time penalty
    model_index: int = 0

    @property
    def success(self) -> bool:
        return self.trajectory is not None


class AllocNet():
    """
    Main class for planning with trained allocation networks.
    """
    def __init__(self,
                 model: Union[str, Path, nn.Module, Sequence[Union[str, Path, nn.Module]]],
                 device: Optional[str] = None,
                 solver_settings: Optional[SolverSettings] = None,
                 verbosity: int = 1  # 0,1,2
                 ):
        """
        :param model: A model file, a loaded network, or a list of either. With several models
            :meth:`plan` keeps the cheapest feasible result.
        :param device: The device to run the network on. If None, the device will be chosen automatically.
        :param solver_settings: Settings shared by every QP solve.
        :param verbosity: The verbosity level. 0 is silent, 1 is normal, 2 is verbose.
        """
        from allocnet.utils.utils import _choose_device

        self.verbosity = verbosity
        self.verbose = verbosity != 0
        self.device = _choose_device(device, verbose=verbosity > 1)
        self.solver_settings = solver_settings

        models = model if isinstance(model, (list, tuple)) else [model]
        if not models:
            raise ValueError("At least one model is required")
        self.models: List[AllocNet_MLP] = [self._load(m).to(self.device).eval() for m in models]

    @staticmethod
    def _load(model) -> AllocNet_MLP:
        if isinstance(model, nn.Module):
            return model
        from allocnet.utils.model_loader import load_model
        return load_model(model)[0]

    @property
    def model(self) -> AllocNet_MLP:
        return self.models[0]

    def predict(self, instance: ProblemInstance, model: Optional[AllocNet_MLP] = None):
        """Raw network outputs for one instance: (durations, stop probabilities) as numpy arrays."""
        from allocnet.utils.dataset import padded_for_instance

        model = model or self.model
        if instance.kappa != model.kappa:
            raise ValueError(f"Instance has kappa {instance.kappa}, the model was trained with {model.kappa}")
        if instance.num_segments > model.m_max:
            raise ValueError(f"Instance has {instance.num_segments} corridors, the model handles at most {model.m_max}")
        padded = padded_for_instance(instance, model.m_max, model.f_max)
        corridors = torch.as_tensor(padded.data[None], dtype=torch.float64, device=self.device)
        q0 = torch.as_tensor(instance.q0[None], dtype=torch.float64, device=self.device)
        qf = torch.as_tensor(instance.qf[None], dtype=torch.float64, device=self.device)
        with torch.no_grad():
            durations, stop_probs = model(corridors, q0, qf)
        return durations[0].cpu().numpy(), stop_probs[0].cpu().numpy()

    def infer(self, instance: ProblemInstance, alpha: float = 0.5, strict_length: bool = False,
              model: Optional[AllocNet_MLP] = None, scale_factor: float = 1.2, scale_cap: int = 10) -> PlanResult:
        """
        Predict durations, cut them at the predicted segment count, solve the QP and rescale
        the durations if the first solve is infeasible.

        :param strict_length: A predicted segment count different from the instance's is a failure.
            Otherwise the prediction is truncated, or padded with the last predicted duration.
        """
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        start = time.perf_counter()
        durations, stop_probs = self.predict(instance, model)
        m_hat = predict_segments(stop_probs, alpha)
        inference_time = time.perf_counter() - start

        m = instance.num_segments
        length_miss = m_hat != m
        if length_miss:
            if strict_length:
                if self.verbosity > 1:
                    print(f"Predicted {m_hat} segments for {m} corridors")
                return PlanResult(None, None, m_hat, True, 0, inference_time, 0.0)
            warnings.warn(f"Predicted {m_hat} segments for {m} corridors, adjusting the allocation")
        t = durations[:m_hat]
        t = t[:m] if m_hat >= m else np.concatenate([t, np.full(m - m_hat, t[-1])])
        t = np.maximum(t, T_MIN)

        start = time.perf_counter()
        allocation, sol, scalings = rescue(instance, t, factor=scale_factor, cap=scale_cap,
                                           settings=self.solver_settings)
        solve_time = time.perf_counter() - start
        if allocation is None:
            return PlanResult(None, None, m_hat, length_miss, scalings, inference_time, solve_time)

        traj = PiecewiseTrajectory.from_vector(sol.c_star, allocation.durations, instance.degree)
        cost = sol.objective + instance.w_t * allocation.total
        return PlanResult(traj, allocation, m_hat, length_miss, scalings, inference_time, solve_time, cost)

    def plan(self, instance: ProblemInstance, alpha: float = 0.5, strict_length: bool = False) -> PlanResult:
        """Run every model and keep the feasible result with the lowest objective."""
        best = None
        for i, model in enumerate(self.models):
            result = self.infer(instance, alpha, strict_length, model=model)
            result.model_index = i
            if best is None or (result.success and result.cost < best.cost):
                if best is not None:
                    result.inference_time += best.inference_time
                    result.solve_time += best.solve_time
                best = result
            else:
                best.inference_time += result.inference_time
                best.solve_time += result.solve_time
        if self.verbose and best.success:
            print(f"Planned {len(best.trajectory.segments)} segments, total time {best.allocation.total:.3f} s, "
                  f"cost {best.cost:.5g}")
        return best

    def export_trajectory(self, result: PlanResult, path: Union[str, Path], rate: float = 100.0) -> Path:
        from allocnet.utils.polynomial import export_trajectory

        if not result.success:
            raise ValueError("No trajectory to export")
        return export_trajectory(result.trajectory, path, rate)
