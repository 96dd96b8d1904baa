"""
Train an allocation network on a generated dataset through the differentiable QP layer.
"""

import argparse
import copy
import os
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from allocnet.utils.AI_utils import TrainingConfig, check_records, test_epoch, train_epoch
from allocnet.utils.dataset import DatasetRecord, split_records
from allocnet.utils.loss.allocnet_loss import AllocNetLoss
from allocnet.utils.models.AllocNet_MLP import AllocNet_MLP


def save_run_command(output_path) -> None:
    """Append the command used to launch this run to ``output_path/command.txt``."""
    import shlex
    import socket
    from datetime import datetime

    py_cmd = " ".join(shlex.quote(x) for x in [sys.executable, *sys.argv])
    lines = [f"# {datetime.now().isoformat(timespec='seconds')}  host={socket.gethostname()}",
             f"# cwd: {os.getcwd()}",
             py_cmd]
    try:
        with open(Path(output_path) / "command.txt", "a") as f:
            f.write("\n".join(lines) + "\n\n")
    except OSError as e:
        print(f"Could not write command.txt: {e}")


def train(records: Sequence[DatasetRecord],
          config: TrainingConfig,
          device: Optional[str] = None,
          output_path: Optional[Path] = None,
          verbose: bool = True) -> Tuple[AllocNet_MLP, pd.DataFrame]:
    """
    Adam on the combined objective and stop-token loss. The weights with the lowest
    validation loss (training loss without a validation split) are returned and, when
    ``output_path`` is given, saved there as ``model.json``.

    :return: the model and the per-epoch log.
    """
    from allocnet.utils.model_loader import save_model
    from allocnet.utils.qp_solver import SolverSettings
    from allocnet.utils.utils import _choose_device, count_parameters, set_seed
    from allocnet.utils.visualization import save_training_plot

    check_records(records, config)
    device = _choose_device(device, verbose=verbose)
    set_seed(config.seed)
    train_records, val_records = split_records(records, config.validation_fraction, config.seed)

    model = AllocNet_MLP(m_max=config.m_max, f_max=config.f_max, kappa=config.kappa, layers=config.hidden).to(device)
    if verbose:
        print(f"Model has {count_parameters(model)} trainable parameters")
    # no wall-clock limit, so the QP outcomes do not depend on machine load
    loss_fn = AllocNetLoss(w_F=config.w_F, w_S=config.w_S, lambda_p=config.lambda_p, alpha=config.alpha,
                           loss_mode=config.loss_mode, solver_settings=SolverSettings(time_budget_ms=None),
                           reduce_inactive=config.reduce_inactive, num_workers=config.num_workers)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999))
    scheduler = None
    if config.cosine_annealing:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, config.epochs),
                                                               eta_min=config.lr * 1e-2)
    generator = torch.Generator().manual_seed(config.seed)

    if output_path is not None:
        output_path = Path(output_path)
        output_path.mkdir(parents=True, exist_ok=True)

    log = []
    best_loss, best_state = np.inf, copy.deepcopy(model.state_dict())
    for epoch in range(config.epochs):
        train_stats, train_time = train_epoch(model, device, train_records, loss_fn, optimizer, config, generator)
        if not np.isfinite(train_stats["loss"]):
            raise RuntimeError(f"Training diverged at epoch {epoch}: no batch produced a finite loss")
        if val_records:
            val_stats, test_time = test_epoch(model, device, val_records, loss_fn, config)
        else:
            val_stats, test_time = {k: float("nan") for k in train_stats}, 0.0

        dict_to_print = {"epoch": epoch, "train_loss": train_stats["loss"], "test_loss": val_stats["loss"],
                         "objective_loss": train_stats["objective"], "token_loss": train_stats["token"],
                         "feasible_fraction": train_stats["feasible_fraction"],
                         "token_accuracy": train_stats["token_accuracy"],
                         "test_token_accuracy": val_stats["token_accuracy"],
                         "lr": optimizer.param_groups[0]["lr"],
                         "training_time": train_time, "testing_time": test_time}
        log.append(dict_to_print)
        if scheduler is not None:
            scheduler.step()

        selection = val_stats["loss"] if val_records else train_stats["loss"]
        if selection < best_loss:
            best_loss = selection
            best_state = copy.deepcopy(model.state_dict())
            if output_path is not None:
                save_model(model, output_path / "model.json", config.to_dict())
                if verbose:
                    print(f"Saving model, best loss: {best_loss:.5g}")

        if verbose:
            print(", ".join(f"{k}: {v:.5g}" for k, v in dict_to_print.items()))
        if output_path is not None:
            pd.DataFrame(log).to_csv(output_path / "training_log.csv", index=False, float_format="%.10g")
            save_training_plot([r["train_loss"] for r in log], [r["test_loss"] for r in log],
                               [r["token_accuracy"] for r in log], [r["feasible_fraction"] for r in log],
                               output_path)

    model.load_state_dict(best_state)
    model.eval()
    if output_path is not None and config.epochs == 0:
        save_model(model, output_path / "model.json", config.to_dict())
    return model, pd.DataFrame(log)


def add_arguments(parser: argparse.ArgumentParser):
    from allocnet.scripts.cli import add_problem_arguments, str2bool

    add_problem_arguments(parser)
    parser.add_argument("-d_p", "--data_path", type=str, required=True, help="Dataset file from gen-data")
    parser.add_argument("-o_p", "--output_path", type=str, default=None,
                        help="Folder for the run, defaults to $ALLOCNET_OUTPUT_PATH/<experiment_str>")
    parser.add_argument("-e_s", "--experiment_str", type=str, default="my_first_allocnet", help="Name of the run")
    parser.add_argument("-e", "--num_epochs", type=int, default=100)
    parser.add_argument("-bs", "--batch_size", type=int, default=16)
    parser.add_argument("-lr", "--lr", type=float, default=1e-3, help="Learning rate")
    parser.add_argument("-layers", "--layers", type=str, default="[64, 64]", help="Hidden layer widths")
    parser.add_argument("-w_F", "--w_F", type=float, default=1200.0, help="Weight of the reference time term")
    parser.add_argument("-w_S", "--w_S", type=float, default=20.0, help="Weight of the stop token loss")
    parser.add_argument("-lambda_p", "--lambda_p", type=float, default=5.0, help="Weight of the end penalties")
    parser.add_argument("-alpha", "--alpha", type=float, default=0.5, help="Stop token threshold")
    parser.add_argument("-loss_mode", "--loss_mode", type=str, default="full", choices=["full", "objective_only"])
    parser.add_argument("-val", "--validation_fraction", type=float, default=0.1)
    parser.add_argument("-clip", "--clip", type=float, default=10.0, help="Gradient clipping value")
    parser.add_argument("-anneal", "--cosineannealing", default=True, type=str2bool,
                        help="Cosine-anneal the learning rate over the epochs down to lr*1e-2")
    parser.add_argument("-reduce", "--reduce_inactive", default=True, type=str2bool,
                        help="Eliminate inactive constraints before the KKT solve")
    parser.add_argument("-device", "--device", type=str, default=None)
    parser.add_argument("-cluster", "--on_cluster", default=False, type=str2bool,
                        help="Disable progress bars")


def _parse_layers(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(w) for w in text.strip("[]() ").split(",") if w.strip())
    except ValueError as e:
        raise ValueError(f"Could not parse layers {text!r}") from e


def run(args) -> int:
    from allocnet.scripts.cli import workers
    from allocnet.utils.dataset import load_dataset
    from allocnet.utils.utils import get_output_path

    records = load_dataset(args.data_path)
    if not records:
        raise ValueError(f"{args.data_path} holds no records")
    config = TrainingConfig(w_F=args.w_F, w_t=args.w_t, w_S=args.w_S, lambda_p=args.lambda_p, alpha=args.alpha,
                            lr=args.lr, epochs=args.num_epochs, batch_size=args.batch_size, seed=args.seed,
                            hidden=_parse_layers(args.layers), loss_mode=args.loss_mode,
                            validation_fraction=args.validation_fraction, m_max=records[0].padded.m_max,
                            f_max=records[0].padded.f_max, kappa=args.kappa, clip=args.clip,
                            cosine_annealing=args.cosineannealing,
                            num_workers=workers(args), reduce_inactive=args.reduce_inactive,
                            on_cluster=args.on_cluster or args.verbosity == 0)

    output_path = Path(args.output_path) if args.output_path else get_output_path() / args.experiment_str
    output_path.mkdir(parents=True, exist_ok=True)
    save_run_command(output_path)
    args_dict = {**vars(args), **config.to_dict()}
    args_dict.pop("run", None)
    args_dict = {k: str(v) if isinstance(v, (list, tuple)) else v for k, v in args_dict.items()}
    pd.DataFrame.from_dict(args_dict, orient='index').to_csv(output_path / "experiment_log.csv", header=False)

    train(records, config, device=args.device, output_path=output_path, verbose=args.verbosity > 0)
    if args.verbosity > 0:
        print(f"Saved model and logs to {output_path}")
    return 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip())
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == "__main__":
    main()
