#!/usr/bin/python
"""
Core utilities for allocnet: device selection, seeding, output paths and timing.
"""

import os
import random
import time
from pathlib import Path
from typing import Any, Callable, Optional, Tuple

import numpy as np
import torch


def _choose_device(device: str = None, verbose=True) -> str:
    """
    Choose a device to use with PyTorch, given the desired device name.
    If a requested device is not specified or not available, then a default is chosen.
    The network runs in float64, so MPS is never selected.
    """
    if device is not None:
        if device == 'cuda' and not torch.cuda.is_available():
            device = None
            print('CUDA device requested but not available!')
        if device == 'mps':
            device = None
            print('MPS does not support float64, falling back to the default device')

    if device is None:
        device = 'cuda' if torch.cuda.is_available() else 'cpu'
        if verbose:
            print(f'Requesting default device: {device}')

    return device


def set_seed(seed: int, deterministic: bool = True):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


def get_output_path(default: str = "../results") -> Path:
    """Output directory, overridden by ``ALLOCNET_OUTPUT_PATH``."""
    return Path(os.environ.get("ALLOCNET_OUTPUT_PATH", default))


def timed(fn: Callable, *args, **kwargs) -> Tuple[Any, float]:
    """Call ``fn`` and return its result with the elapsed wall time in milliseconds."""
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, (time.perf_counter() - start) * 1000.0


def count_parameters(model: torch.nn.Module, trainable_only: Optional[bool] = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)
