from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def mlp_block(in_features, out_features, act="ReLU"):
    if act == "None" or act is None:
        act_layer = nn.Identity()
    elif act.lower() == "relu":
        act_layer = nn.ReLU()
    elif act.lower() == "tanh":
        act_layer = nn.Tanh()
    else:
        raise ValueError("Act must be None, ReLU or Tanh")
    return nn.Sequential(nn.Linear(in_features, out_features), act_layer)


class AllocNet_MLP(nn.Module):
    """
    Maps a padded corridor tensor and the boundary states to ``m_max`` positive durations
    and ``m_max`` stop-token probabilities.

    Inputs are flattened as ``[corridors (m_max * f_max * 4), q0 (3 * kappa), qf (3 * kappa)]``
    and divided by a fixed scale vector: offsets by the largest workspace half-extent,
    boundary states by the half-extent of their axis, unit normals unchanged.
    """

    def __init__(self,
                 m_max: int = 3,
                 f_max: int = 6,
                 kappa: int = 3,
                 layers: Sequence[int] = (64, 64),
                 workspace_half_extent: Sequence[float] = (6.25, 6.25, 2.5),
                 act: str = "ReLU"):
        super().__init__()
        if m_max < 1 or f_max < 1:
            raise ValueError(f"m_max and f_max must be positive, got {m_max}, {f_max}")
        if kappa not in (3, 4):
            raise ValueError(f"kappa must be 3 or 4, got {kappa}")
        self.m_max = int(m_max)
        self.f_max = int(f_max)
        self.kappa = int(kappa)
        self.layers = tuple(int(width) for width in layers)
        self.act = act

        dims = [self.input_dim, *self.layers]
        self.body = nn.Sequential(*[mlp_block(dims[i], dims[i + 1], act) for i in range(len(dims) - 1)])
        self.head = nn.Linear(dims[-1], 2 * self.m_max)

        half = np.asarray(workspace_half_extent, dtype=float)
        corridor_scale = np.ones((self.m_max, self.f_max, 4))
        corridor_scale[..., 3] = half.max()
        boundary_scale = np.repeat(half[:, None], self.kappa, axis=1)
        scale = np.concatenate([corridor_scale.ravel(), boundary_scale.ravel(), boundary_scale.ravel()])
        self.register_buffer("input_scale", torch.as_tensor(scale, dtype=torch.float64))
        self.register_buffer("workspace_half_extent", torch.as_tensor(half, dtype=torch.float64))
        self.double()

    @property
    def input_dim(self) -> int:
        return self.m_max * self.f_max * 4 + 2 * 3 * self.kappa

    def normalise(self, corridors: torch.Tensor, q0: torch.Tensor, qf: torch.Tensor) -> torch.Tensor:
        batch = corridors.shape[0]
        x = torch.cat([corridors.reshape(batch, -1), q0.reshape(batch, -1), qf.reshape(batch, -1)], dim=1)
        return x / self.input_scale

    def forward(self, corridors: torch.Tensor, q0: torch.Tensor, qf: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        :param corridors: (B, m_max, f_max, 4) padded corridor tensor.
        :param q0: (B, 3, kappa) start state.
        :param qf: (B, 3, kappa) goal state.
        :return: durations (B, m_max), strictly positive, and stop probabilities (B, m_max).
        """
        x = self.normalise(corridors, q0, qf)
        out = self.head(self.body(x))
        durations = F.softplus(out[:, :self.m_max])
        stop_probs = torch.sigmoid(out[:, self.m_max:])
        return durations, stop_probs

    def config(self) -> dict:
        return {"m_max": self.m_max, "f_max": self.f_max, "kappa": self.kappa, "layers": list(self.layers),
                "workspace_half_extent": self.workspace_half_extent.tolist(), "act": self.act}


def predict_segments(s: Union[Sequence[float], np.ndarray, torch.Tensor], alpha: float) -> int:
    """One plus the first index whose stop probability exceeds ``alpha``; the full length if none does."""
    if isinstance(s, torch.Tensor):
        s = s.detach().cpu().numpy()
    s = np.asarray(s, dtype=float).reshape(-1)
    above = np.flatnonzero(s > alpha)
    return int(above[0]) + 1 if above.size else int(s.shape[0])
