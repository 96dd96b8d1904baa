"""
Single entry point for the pipeline: ``allocnet {gen-data,plan,train,bench,gradcheck}``.

Exit codes: 0 on success, 1 on a domain error (invalid input, infeasible result,
failed check), 2 on a usage error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional


def str2bool(x) -> bool:
    return str(x).lower() == 'true'


def add_problem_arguments(parser: argparse.ArgumentParser):
    """Dynamic limits, sampling and cost weight shared by every subcommand."""
    parser.add_argument("-v_max", "--v_max", type=float, default=4.0, help="Velocity bound per axis [m/s]")
    parser.add_argument("-a_max", "--a_max", type=float, default=6.0, help="Acceleration bound per axis [m/s^2]")
    parser.add_argument("-j_max", "--j_max", type=float, default=8.0, help="Jerk bound per axis [m/s^3], only used with kappa 4")
    parser.add_argument("-n_res", "--n_res", type=int, default=20, help="Constraint samples per segment minus one")
    parser.add_argument("-w_t", "--w_t", type=float, default=17.5, help="Weight of the total time in the objective")
    parser.add_argument("-kappa", "--kappa", type=int, default=3, choices=[3, 4], help="3 for minimum jerk, 4 for minimum snap")
    parser.add_argument("-seed", "--seed", type=int, default=0, help="Seed for every random choice")
    parser.add_argument("-serial", "--serial", default=False, type=str2bool, nargs="?", const=True,
                        help="Disable all thread pools")
    parser.add_argument("-num_workers", "--num_workers", type=int, default=4, help="Threads for per-instance work")
    parser.add_argument("-verbosity", "--verbosity", type=int, default=1, choices=[0, 1, 2])
    parser.add_argument("-config", "--config", type=str, default=None,
                        help="JSON file of option defaults; explicit flags take precedence")


def add_optimizer_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("-max_iters", "--max-iters", "--max_iters", dest="max_iters", type=int, default=100,
                        help="Iteration cap of the duration optimizers")
    parser.add_argument("-grad_tol", "--grad-tol", "--grad_tol", dest="grad_tol", type=float, default=1e-3,
                        help="Gradient norm at which the duration optimizers stop")
    parser.add_argument("-qp_iters", "--qp_iters", type=int, default=200, help="Interior point iteration cap")
    parser.add_argument("-qp_tol", "--qp_tol", type=float, default=1e-8, help="Interior point stopping tolerance")


def d_m(args) -> tuple:
    return (args.v_max, args.a_max, args.j_max)[:args.kappa - 1]


def workers(args) -> int:
    return 0 if args.serial else args.num_workers


def solver_settings(args):
    from allocnet.utils.qp_solver import SolverSettings

    return SolverSettings(max_iter=args.qp_iters, tol=args.qp_tol, accept_tol=max(1e-6, args.qp_tol),
                          time_budget_ms=None if args.serial else 500.0)


def optimizer_settings(args):
    from allocnet.utils.time_opt import OptimizerSettings

    return OptimizerSettings(max_iters=args.max_iters, grad_tol=args.grad_tol, solver=solver_settings(args),
                             verbose=args.verbosity > 1)


def check_problem_arguments(args):
    if min(args.v_max, args.a_max, args.j_max) <= 0:
        raise ValueError("Dynamic limits must be positive")
    if args.n_res < 2:
        raise ValueError("n_res must be at least 2")
    if args.w_t < 0:
        raise ValueError("w_t must be nonnegative")
    if args.num_workers < 0:
        raise ValueError("num_workers must be nonnegative")


def _commands():
    from allocnet.scripts import bench, gen_data, gradcheck, plan, train

    return {"gen-data": gen_data, "plan": plan, "train": train, "bench": bench, "gradcheck": gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="allocnet", description=__doc__.strip().splitlines()[0])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, module in _commands().items():
        sub = subparsers.add_parser(name, help=module.__doc__.strip().splitlines()[0])
        module.add_arguments(sub)
        sub.set_defaults(run=module.run)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: List[str], args: argparse.Namespace) -> argparse.Namespace:
    """Re-parse with the JSON config file as defaults so explicit flags still win."""
    path = Path(args.config)
    if not path.exists():
        raise ValueError(f"Config file {path} does not exist")
    with open(path) as f:
        try:
            values = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - set(vars(args)))
    if unknown:
        raise ValueError(f"Unknown options in {path}: {', '.join(unknown)}")

    subparser = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    try:
        if args.config is not None:
            args = _apply_config(parser, argv, args)
        check_problem_arguments(args)
        return int(args.run(args))
    except (ValueError, RuntimeError, NotImplementedError, OSError) as e:
        print(f"allocnet {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
