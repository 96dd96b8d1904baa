import time
import warnings
from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from allocnet.utils.dataset import DatasetRecord, records_to_tensors

ALPHA_ABLATION = (0.35, 0.5, 0.75)


@dataclass
class TrainingConfig:
    w_F: float = 1200.0
    w_t: float = 17.5
    w_S: float = 20.0
    lambda_p: float = 5.0
    alpha: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    hidden: Tuple[int, ...] = (64, 64)
    loss_mode: str = "full"  # "full" or "objective_only"
    validation_fraction: float = 0.1
    m_max: int = 3
    f_max: int = 6
    kappa: int = 3
    clip: float = 10.0
    cosine_annealing: bool = True
    num_workers: int = 0
    reduce_inactive: bool = True
    on_cluster: bool = False

    def __post_init__(self):
        if min(self.w_F, self.w_t, self.w_S, self.lambda_p) < 0:
            raise ValueError("Loss weights must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.lr <= 0 or self.clip <= 0:
            raise ValueError("lr and clip must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be nonnegative and batch_size positive")
        if self.loss_mode not in ("full", "objective_only"):
            raise NotImplementedError(f"Loss mode {self.loss_mode} is not implemented")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.kappa not in (3, 4):
            raise ValueError(f"kappa must be 3 or 4, got {self.kappa}")
        self.hidden = tuple(int(width) for width in self.hidden)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def check_records(records: Sequence[DatasetRecord], config: TrainingConfig):
    """Every record must match the network's padding and the configured kappa and w_t."""
    if not records:
        raise ValueError("Dataset is empty")
    for i, r in enumerate(records):
        if r.padded.m_max != config.m_max or r.padded.f_max != config.f_max:
            raise ValueError(f"Record {i} is padded to ({r.padded.m_max}, {r.padded.f_max}), "
                             f"the model expects ({config.m_max}, {config.f_max})")
        if r.instance.kappa != config.kappa:
            raise ValueError(f"Record {i} has kappa {r.instance.kappa}, the model expects {config.kappa}")
        if r.instance.w_t != config.w_t:
            raise ValueError(f"Record {i} has w_t {r.instance.w_t}, the config says {config.w_t}")


def iterate_batches(records: Sequence[DatasetRecord], batch_size: int, shuffle: bool = False,
                    generator: Optional[torch.Generator] = None) -> Iterator[List[DatasetRecord]]:
    order = torch.randperm(len(records), generator=generator).tolist() if shuffle else range(len(records))
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield [records[i] for i in order[start:start + batch_size]]


def _forward(model, device, batch):
    corridors, q0, qf = (x.to(device) for x in records_to_tensors(batch))
    durations, stop_probs = model(corridors, q0, qf)
    return durations.cpu(), stop_probs.cpu()


class EpochStats:
    def __init__(self):
        self.losses = []
        self.objective = []
        self.token = []
        self.feasible = 0
        self.token_hits = 0
        self.count = 0

    def update(self, loss_fn, loss: float, batch_size: int):
        self.losses.append(loss)
        self.objective.append(loss_fn.last_objective_loss)
        self.token.append(loss_fn.last_token_loss)
        self.feasible += loss_fn.last_branches.count("feasible")
        self.token_hits += loss_fn.last_token_hits
        self.count += batch_size

    def summary(self) -> dict:
        if not self.count:
            return {"loss": float("nan"), "objective": float("nan"), "token": float("nan"),
                    "feasible_fraction": float("nan"), "token_accuracy": float("nan")}
        return {"loss": float(np.mean(self.losses)),
                "objective": float(np.mean(self.objective)),
                "token": float(np.mean(self.token)),
                "feasible_fraction": self.feasible / self.count,
                "token_accuracy": self.token_hits / self.count}


def train_epoch(train_model,
                train_device,
                train_records,
                train_loss_fn,
                train_optimizer,
                args: TrainingConfig,
                generator: Optional[torch.Generator] = None,
                ) -> Tuple[dict, float]:
    """One pass over the shuffled training records.

    The reported statistics are recomputed on all training records with the weights frozen at
    the end of the pass, so every epoch is scored by a single set of weights.

    :return: epoch statistics (mean loss, objective and token terms, feasible-branch fraction,
        token accuracy) and the epoch time in seconds.
    """
    start = time.time()
    train_model.train()
    skipped, stepped = 0, 0

    batches = list(iterate_batches(train_records, args.batch_size, shuffle=True, generator=generator))
    for batch in tqdm(batches, disable=args.on_cluster):
        durations, stop_probs = _forward(train_model, train_device, batch)
        loss = train_loss_fn(durations, stop_probs, batch)

        if not torch.isfinite(loss):
            warnings.warn(f"Skipping batch: non-finite loss ({loss.item()})")
            train_optimizer.zero_grad(set_to_none=True)
            skipped += 1
            continue

        train_optimizer.zero_grad()
        loss.backward()
        total_norm = torch.nn.utils.clip_grad_norm_(train_model.parameters(), args.clip)
        if not torch.isfinite(total_norm):
            warnings.warn(f"Skipping batch: non-finite gradient norm ({total_norm.item()})")
            train_optimizer.zero_grad(set_to_none=True)
            skipped += 1
            continue
        train_optimizer.step()
        stepped += 1

    if skipped:
        print(f"Skipped {skipped} of {len(batches)} batch(es) for non-finite loss or gradient")
    if not stepped:
        return EpochStats().summary(), time.time() - start
    stats, _ = test_epoch(train_model, train_device, train_records, train_loss_fn, args)
    return stats, time.time() - start


def test_epoch(test_model,
               test_device,
               test_records,
               test_loss_fn,
               args: TrainingConfig) -> Tuple[dict, float]:
    """Loss statistics without gradient tracking. Batches with a non-finite loss are left out."""
    start = time.time()
    test_model.eval()
    stats = EpochStats()
    with torch.no_grad():
        for batch in tqdm(list(iterate_batches(test_records, args.batch_size)), disable=args.on_cluster):
            durations, stop_probs = _forward(test_model, test_device, batch)
            loss = test_loss_fn(durations, stop_probs, batch)
            if torch.isfinite(loss):
                stats.update(test_loss_fn, float(loss), len(batch))
    return stats.summary(), time.time() - start
