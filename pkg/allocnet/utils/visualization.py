#!/usr/bin/python
"""
Visualization utilities for allocnet: training curves and trajectories inside their corridors.
"""

import itertools
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from allocnet.utils.corridor import CorridorSequence, HPolytope
from allocnet.utils.polynomial import PiecewiseTrajectory


def _moving_average(x, w):
    """Moving average of an array x with window size w"""
    return np.convolve(x, np.ones(w), 'valid') / w


def save_training_plot(train_losses: Sequence[float], test_losses: Sequence[float],
                       token_accuracy: Sequence[float], feasible_fraction: Sequence[float],
                       output_path: Union[str, Path]) -> Path:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    window_size = max(len(train_losses) // 10 + 1, 1)
    fig, ax1 = plt.subplots(figsize=(10, 6))

    train = np.asarray(train_losses, dtype=float)
    ax1.plot(_moving_average(np.clip(train, None, np.nanpercentile(train, 99)), window_size),
             label="train loss", color="tab:blue")
    test = np.asarray(test_losses, dtype=float)
    if test.size and np.any(np.isfinite(test)):
        ax1.plot(_moving_average(np.clip(test, None, np.nanpercentile(test, 99)), window_size),
                 label="validation loss", color="tab:orange")
    ax1.set_xlabel("Epoch")
    ax1.set_ylabel("Loss")
    ax1.set_yscale("log")
    ax1.legend(loc="upper left")

    ax2 = ax1.twinx()
    ax2.set_ylabel("Fraction")
    ax2.set_ylim(0, 1.05)
    ax2.plot(token_accuracy, label="token accuracy", color="tab:green", linestyle="--")
    ax2.plot(feasible_fraction, label="feasible branch", color="tab:red", linestyle="--")
    ax2.legend(loc="upper right")

    path = Path(output_path) / "training_plot.png"
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _box_bounds(poly: HPolytope) -> Optional[np.ndarray]:
    """(2, 3) lower/upper corners if the polytope is an axis-aligned box, else None."""
    bounds = np.full((2, 3), np.nan)
    for normal, offset in zip(poly.normals, poly.offsets):
        axis = int(np.argmax(np.abs(normal)))
        if not np.isclose(abs(normal[axis]), 1.0):
            return None
        if normal[axis] > 0:
            bounds[1, axis] = offset
        else:
            bounds[0, axis] = -offset
    return None if np.any(np.isnan(bounds)) else bounds


def _draw_box(ax, bounds: np.ndarray, color):
    corners = np.array(list(itertools.product(*bounds.T)))
    for a, b in itertools.combinations(range(8), 2):
        if np.count_nonzero(corners[a] != corners[b]) == 1:
            ax.plot(*np.stack([corners[a], corners[b]]).T, color=color, linewidth=0.6, alpha=0.6)


def plot_trajectory(traj: PiecewiseTrajectory, corridors: Optional[CorridorSequence] = None,
                    output_path: Optional[Union[str, Path]] = None, rate: float = 100.0, title: str = None):
    """
    Path of the trajectory in 3-D with its corridor boxes drawn as wireframes. Non-box
    polytopes are marked by their Chebyshev center.

    :return: the figure, also saved to ``output_path`` when given.
    """
    import matplotlib
    if output_path is not None:
        matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    from allocnet.utils.corridor import chebyshev_center

    samples = traj.sample(rate)
    fig = plt.figure(figsize=(8, 8))
    ax = fig.add_subplot(projection="3d")
    colors = plt.cm.tab10.colors
    if corridors is not None:
        for i, poly in enumerate(corridors.polytopes):
            bounds = _box_bounds(poly)
            if bounds is not None:
                _draw_box(ax, bounds, colors[i % len(colors)])
            else:
                center, _ = chebyshev_center(poly.normals, poly.offsets)
                ax.scatter(*center, color=colors[i % len(colors)], marker="x")
    ax.plot(samples[:, 1], samples[:, 2], samples[:, 3], color="k", linewidth=1.5)
    ax.scatter(*samples[0, 1:4], color="tab:green", label="start")
    ax.scatter(*samples[-1, 1:4], color="tab:red", label="goal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.legend()
    if title:
        ax.set_title(title)
    if output_path is not None:
        fig.savefig(output_path)
        plt.close(fig)
    return fig
