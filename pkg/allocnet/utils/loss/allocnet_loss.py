import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.autograd import Function

from allocnet.utils.implicit_diff import KKTSingularError, loss_gradient
from allocnet.utils.models.AllocNet_MLP import predict_segments
from allocnet.utils.qp_builder import T_MIN, ProblemInstance, QPProblem
from allocnet.utils.qp_solver import QPSolution, QPStatus, SolverSettings

PROB_CLAMP = 1e-7


class ControlCost(Function):
    """
    ``c*(t)^T Q(t) c*(t)`` for a solved QP, with the backward pass through the
    differentiated KKT system. The QP is solved before the call so the caller can
    branch on its status.
    """

    @staticmethod
    def forward(ctx, durations, instance, prob, sol, reduce_inactive=True):
        ctx.instance = instance
        ctx.prob = prob
        ctx.sol = sol
        ctx.reduce_inactive = reduce_inactive
        ctx.t = durations.detach().cpu().numpy().astype(float)
        return durations.new_tensor(float(sol.c_star @ prob.Q @ sol.c_star))

    @staticmethod
    def backward(ctx, grad_output):
        instance, prob, sol, t = ctx.instance, ctx.prob, ctx.sol, ctx.t
        try:
            grad = loss_gradient(sol, instance, t, prob=prob, reduce_inactive=ctx.reduce_inactive) - instance.w_t
        except KKTSingularError as e:
            from allocnet.utils.time_opt import OptimizerSettings, fd_gradient

            warnings.warn(f"Implicit gradient failed ({e}), falling back to finite differences")
            cost = float(sol.c_star @ prob.Q @ sol.c_star) + instance.w_t * float(np.sum(t))
            grad, _ = fd_gradient(instance, t, cost, OptimizerSettings())
            grad = grad - instance.w_t
        grad = torch.as_tensor(grad, dtype=grad_output.dtype, device=grad_output.device)
        return grad_output * grad, None, None, None, None


def presolve(durations: torch.Tensor, instances: Sequence[ProblemInstance], settings: Optional[SolverSettings] = None,
             num_workers: int = 0) -> List[Tuple[QPProblem, QPSolution]]:
    """Solve the QP of every sample at its truncated, clamped durations. Results keep the input order."""
    from allocnet.utils.time_opt import solve_at

    t_all = durations.detach().cpu().numpy()
    jobs = [np.maximum(t_all[b, :inst.num_segments], T_MIN) for b, inst in enumerate(instances)]
    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            return list(pool.map(lambda args: solve_at(args[0], args[1], settings), zip(instances, jobs)))
    return [solve_at(inst, t, settings) for inst, t in zip(instances, jobs)]


def token_loss(s: torch.Tensor, s_bar: torch.Tensor, alpha: float, lambda_p: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean binary cross-entropy plus ``lambda_p`` times the premature and late end penalties.

    :return: the loss (differentiable through the BCE term only) and its analytic gradient in ``s``.
    """
    s_clamped = s.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    bce = F.binary_cross_entropy(s_clamped, s_bar, reduction="mean")
    with torch.no_grad():
        premature = ((s > alpha) & (s_bar < alpha)).sum()
        late = ((s < alpha) & (s_bar > alpha)).sum()
        penalty = lambda_p * (premature + late).to(s.dtype)
        inside = (s > PROB_CLAMP) & (s < 1 - PROB_CLAMP)
        grad = (s_clamped - s_bar) / (s_clamped * (1 - s_clamped)) / s.numel() * inside
    return bce + penalty, grad


def end_penalties(s: torch.Tensor, s_bar: torch.Tensor, alpha: float) -> Tuple[int, int]:
    """(premature end count, late end count)."""
    return int(((s > alpha) & (s_bar < alpha)).sum()), int(((s < alpha) & (s_bar > alpha)).sum())


def objective_loss(durations: torch.Tensor, instance: ProblemInstance, t_bar, w_F: float,
                   prob: QPProblem, sol: QPSolution, reduce_inactive: bool = True) -> Tuple[torch.Tensor, str]:
    """
    Objective of the truncated durations: control cost plus time penalty when the QP is solved,
    otherwise the distance to the reference allocation plus time penalty.

    :return: the loss and the branch taken, ``"feasible"`` or ``"infeasible"``.
    """
    t = durations.clamp(min=T_MIN)
    time_term = instance.w_t * t.sum()
    if sol.status == QPStatus.Optimal:
        return ControlCost.apply(t, instance, prob, sol, reduce_inactive) + time_term, "feasible"
    t_bar = torch.as_tensor(np.asarray(t_bar, dtype=float), dtype=t.dtype, device=t.device)
    return w_F * ((t_bar - t) ** 2).sum() + time_term, "infeasible"


def training_loss(durations: torch.Tensor, stop_probs: torch.Tensor, instance: ProblemInstance, t_bar, s_bar,
                  w_F: float = 1200.0, w_S: float = 20.0, lambda_p: float = 5.0, alpha: float = 0.5,
                  loss_mode: str = "full", solved: Optional[Tuple[QPProblem, QPSolution]] = None,
                  solver_settings: Optional[SolverSettings] = None,
                  reduce_inactive: bool = True) -> Tuple[torch.Tensor, dict]:
    """
    Loss of one sample. ``durations`` holds all ``m_max`` outputs; only the first
    ``instance.num_segments`` enter the QP.

    :return: the loss and a dict with the branch, QP status and the objective and token terms.
    """
    m = instance.num_segments
    if solved is None:
        from allocnet.utils.time_opt import solve_at

        solved = solve_at(instance, np.maximum(durations[:m].detach().cpu().numpy(), T_MIN), solver_settings)
    prob, sol = solved
    if sol.status == QPStatus.MaxIterations:
        warnings.warn("QP hit its iteration limit, using the reference-time branch")
    obj, branch = objective_loss(durations[:m], instance, t_bar, w_F, prob, sol, reduce_inactive)
    s_bar = torch.as_tensor(np.asarray(s_bar, dtype=float), dtype=stop_probs.dtype, device=stop_probs.device)
    tok, _ = token_loss(stop_probs, s_bar, alpha, lambda_p)
    loss = obj + w_S * tok if loss_mode == "full" else obj
    return loss, {"branch": branch, "status": sol.status, "objective": float(obj.detach()),
                  "token": float(tok.detach())}


class AllocNetLoss(nn.Module):
    """
    Per-batch training loss: objective term on the ground-truth segment count plus the
    weighted stop-token term. Statistics of the last call are kept on the module.
    """

    def __init__(self,
                 w_F: float = 1200.0,
                 w_S: float = 20.0,
                 lambda_p: float = 5.0,
                 alpha: float = 0.5,
                 loss_mode: str = "full",
                 solver_settings: Optional[SolverSettings] = None,
                 reduce_inactive: bool = True,
                 num_workers: int = 0):
        super().__init__()
        if loss_mode not in ("full", "objective_only"):
            raise NotImplementedError(f"Loss mode {loss_mode} is not implemented")
        if min(w_F, w_S, lambda_p) < 0:
            raise ValueError("Loss weights must be nonnegative")
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.w_F = w_F
        self.w_S = w_S
        self.lambda_p = lambda_p
        self.alpha = alpha
        self.loss_mode = loss_mode
        self.solver_settings = solver_settings
        self.reduce_inactive = reduce_inactive
        self.num_workers = num_workers
        self.reset_stats()

    def reset_stats(self):
        self.last_objective_loss = float("nan")
        self.last_token_loss = float("nan")
        self.last_branches: List[str] = []
        self.last_statuses: List[QPStatus] = []
        self.last_token_hits = 0

    def forward(self, durations: torch.Tensor, stop_probs: torch.Tensor, records) -> torch.Tensor:
        instances = [r.instance for r in records]
        solved = presolve(durations, instances, self.solver_settings, self.num_workers)

        losses, objective_terms, token_terms = [], [], []
        self.last_branches, self.last_statuses = [], []
        self.last_token_hits = 0
        for b, (record, pair) in enumerate(zip(records, solved)):
            loss, info = training_loss(durations[b], stop_probs[b], record.instance, record.t_bar.durations,
                                       record.padded.stop_targets, self.w_F, self.w_S, self.lambda_p, self.alpha,
                                       self.loss_mode, solved=pair, reduce_inactive=self.reduce_inactive)
            losses.append(loss)
            objective_terms.append(info["objective"])
            token_terms.append(info["token"])
            self.last_branches.append(info["branch"])
            self.last_statuses.append(info["status"])
            self.last_token_hits += int(predict_segments(stop_probs[b], self.alpha) == record.instance.num_segments)

        self.last_objective_loss = float(np.mean(objective_terms))
        self.last_token_loss = float(np.mean(token_terms))
        return torch.stack(losses).mean()

    @property
    def last_feasible_fraction(self) -> float:
        if not self.last_branches:
            return float("nan")
        return self.last_branches.count("feasible") / len(self.last_branches)
