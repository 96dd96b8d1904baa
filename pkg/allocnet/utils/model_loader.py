"""
Model file format: one JSON document tagged ``allocnet-mlp/1`` holding the network
config, layer sizes, input normalization and every tensor as a flat list of floats.
Python's float repr round-trips float64 exactly.
"""

import json
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch

from allocnet.utils.models.AllocNet_MLP import AllocNet_MLP

MODEL_FORMAT = "allocnet-mlp/1"


def model_to_dict(model: AllocNet_MLP, training_config: Optional[dict] = None) -> dict:
    state = {k: {"shape": list(v.shape), "values": v.detach().cpu().double().reshape(-1).tolist()}
             for k, v in model.state_dict().items()}
    return {
        "format": MODEL_FORMAT,
        "config": model.config(),
        "layer_sizes": [model.input_dim, *model.layers, 2 * model.m_max],
        "normalisation": {"input_scale": model.input_scale.tolist()},
        "training": training_config or {},
        "state_dict": state,
    }


def build_model_from_dict(build_model_dictionary: dict, random_seed: Optional[int] = None) -> AllocNet_MLP:
    if random_seed is not None:
        torch.manual_seed(random_seed)
    config = dict(build_model_dictionary)
    return AllocNet_MLP(m_max=int(config["m_max"]),
                        f_max=int(config["f_max"]),
                        kappa=int(config["kappa"]),
                        layers=tuple(int(w) for w in config.get("layers", (64, 64))),
                        workspace_half_extent=tuple(config.get("workspace_half_extent", (6.25, 6.25, 2.5))),
                        act=config.get("act", "ReLU"))


def model_from_dict(data: dict) -> AllocNet_MLP:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"Unsupported model format {data.get('format')!r}, expected {MODEL_FORMAT!r}")
    model = build_model_from_dict(data["config"])
    expected = [model.input_dim, *model.layers, 2 * model.m_max]
    if list(data.get("layer_sizes", expected)) != expected:
        raise ValueError(f"Layer sizes {data['layer_sizes']} do not match the config ({expected})")

    own = model.state_dict()
    if set(data["state_dict"]) != set(own):
        raise ValueError(f"Model tensors {sorted(data['state_dict'])} do not match {sorted(own)}")
    state = {}
    for key, entry in data["state_dict"].items():
        values = np.asarray(entry["values"], dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"Non-finite values in {key}")
        if list(entry["shape"]) != list(own[key].shape) or values.size != own[key].numel():
            raise ValueError(f"Shape mismatch for {key}: {entry['shape']} vs {list(own[key].shape)}")
        state[key] = torch.as_tensor(values.reshape(entry["shape"]), dtype=torch.float64)
    model.load_state_dict(state)
    return model


def save_model(model: AllocNet_MLP, path: Union[str, Path], training_config: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(model_to_dict(model, training_config), f)
    return path


def load_model(path: Union[str, Path], device: str = "cpu") -> Tuple[AllocNet_MLP, dict]:
    """
    :return: the model in eval mode on ``device`` and the stored training config.
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Model file {path} does not exist")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} is not a valid model file: {e}") from e
    model = model_from_dict(data)
    model.eval()
    return model.to(device), data.get("training", {})
