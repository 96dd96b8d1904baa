"""
Plan one instance with one method and export the sampled trajectory.
"""

import argparse
import json
from pathlib import Path


def add_arguments(parser: argparse.ArgumentParser):
    from allocnet.scripts.cli import add_optimizer_arguments, add_problem_arguments, str2bool

    add_problem_arguments(parser)
    add_optimizer_arguments(parser)
    parser.add_argument("-i", "--instance", type=str, required=True, help="Instance or dataset file")
    parser.add_argument("-idx", "--index", type=int, default=0, help="Line of the file to plan, counting from 0")
    parser.add_argument("-method", "--method", type=str, default="implicit",
                        help="uniform+scale, fd, implicit or allocnet:<alpha>")
    parser.add_argument("-m", "--model", type=str, nargs="*", default=[], help="Model file(s) for allocnet")
    parser.add_argument("-strict", "--strict_length", default=False, type=str2bool)
    parser.add_argument("-o", "--output", type=str, default=None,
                        help="Trajectory CSV to write, defaults to <instance>_trajectory.csv")
    parser.add_argument("-rate", "--rate", type=float, default=100.0, help="Export sample rate [Hz]")
    parser.add_argument("-plot", "--plot", default=False, type=str2bool, help="Also save a 3-D plot next to the CSV")
    parser.add_argument("-device", "--device", type=str, default=None)


def run(args) -> int:
    from allocnet.scripts.bench import BenchSettings, parse_method, run_method
    from allocnet.scripts.cli import optimizer_settings
    from allocnet.utils.dataset import load_problems
    from allocnet.utils.metrics import trajectory_summary, verify_trajectory
    from allocnet.utils.polynomial import export_trajectory
    from allocnet.utils.utils import timed

    instances = load_problems(args.instance)
    if not 0 <= args.index < len(instances):
        raise ValueError(f"{args.instance} holds {len(instances)} instance(s), index {args.index} requested")
    instance = instances[args.index]

    name, _ = parse_method(args.method)
    settings = BenchSettings(optimizer=optimizer_settings(args), strict_length=args.strict_length)
    planner = None
    if name == "allocnet":
        if not args.model:
            raise ValueError("allocnet needs --model")
        from allocnet.planner_class import AllocNet
        planner = AllocNet(args.model, device=args.device, solver_settings=settings.optimizer.solver,
                           verbosity=args.verbosity)

    out, elapsed_ms = timed(run_method, args.method, instance, settings, planner)
    traj = out["trajectory"]
    report = {"method": args.method, "status": out["status"], "segments": out["segments"],
              "length_miss": out["length_miss"], "scalings": out["scalings"], "comp_time_ms": elapsed_ms}
    if traj is None:
        print(json.dumps(report))
        raise RuntimeError(f"{args.method} found no feasible trajectory ({out['status']})")
    if not verify_trajectory(traj, instance):
        raise RuntimeError("Trajectory failed the constraint re-check")

    cost, total = trajectory_summary(traj, instance.kappa)
    report.update(min_control=cost, traj_time=total, durations=traj.durations.tolist())
    output = Path(args.output) if args.output else Path(args.instance).with_name(
        f"{Path(args.instance).stem}_trajectory.csv")
    output.parent.mkdir(parents=True, exist_ok=True)
    export_trajectory(traj, output, args.rate)
    report["trajectory_file"] = str(output)
    if args.plot:
        from allocnet.utils.visualization import plot_trajectory
        plot_trajectory(traj, instance.corridors, output.with_suffix(".png"), title=args.method)
    if args.verbosity > 0:
        print(json.dumps(report))
    return 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip())
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == "__main__":
    main()
