"""
Compare time allocation methods on the same instances: cost, trajectory time, computation time and success rate.
"""

import argparse
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from allocnet.utils.metrics import BenchRow, InstanceResult, summarize, trajectory_summary, verify_trajectory
from allocnet.utils.qp_builder import ProblemInstance
from allocnet.utils.time_opt import OptimizerSettings

CLASSICAL_METHODS = ("uniform+scale", "fd", "implicit")


@dataclass
class BenchSettings:
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    scale_factor: float = 1.2
    scale_cap: int = 10
    strict_length: bool = False
    num_workers: int = 0

    def __post_init__(self):
        if self.scale_factor <= 1 or self.scale_cap < 0:
            raise ValueError("scale_factor must exceed 1 and scale_cap be nonnegative")


def parse_method(method: str) -> Tuple[str, Optional[float]]:
    """``"allocnet:0.35"`` -> ("allocnet", 0.35); classical names carry no threshold."""
    name, _, alpha = method.partition(":")
    if name in CLASSICAL_METHODS and not alpha:
        return name, None
    if name == "allocnet":
        alpha = float(alpha) if alpha else 0.5
        if not 0 < alpha < 1:
            raise ValueError(f"Threshold of {method} must lie in (0, 1)")
        return name, alpha
    raise NotImplementedError(f"Unknown method {method!r}, expected one of {CLASSICAL_METHODS} or allocnet:<alpha>")


def run_method(method: str, instance: ProblemInstance, settings: BenchSettings, planner=None) -> dict:
    """
    One method on one instance.

    :return: dict with the trajectory (None on failure), predicted segment count,
        length miss flag, number of temporal rescalings and a status string.
    """
    from allocnet.utils.time_opt import optimize_fd, optimize_implicit, reference_time, rescue, uniform_allocation

    name, alpha = parse_method(method)
    solver = settings.optimizer.solver
    m = instance.num_segments
    out = {"trajectory": None, "segments": m, "length_miss": False, "scalings": 0, "status": ""}

    if name == "allocnet":
        if planner is None:
            raise ValueError(f"Method {method} needs a trained model")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = planner.plan(instance, alpha=alpha, strict_length=settings.strict_length)
        out.update(trajectory=result.trajectory, segments=result.predicted_segments,
                   length_miss=result.length_miss, scalings=result.scalings,
                   status="Feasible" if result.success else ("LengthMiss" if result.length_miss and
                                                             settings.strict_length else "Infeasible"))
        return out

    reference = reference_time(instance)
    if name == "uniform+scale":
        t0 = uniform_allocation(instance, reference.total).durations
    else:
        t0 = reference.durations
    allocation, sol, scalings = rescue(instance, t0, settings.scale_factor, settings.scale_cap, solver)
    out["scalings"] = scalings
    if allocation is None:
        out["status"] = "Infeasible"
        return out

    if name == "uniform+scale":
        from allocnet.utils.polynomial import PiecewiseTrajectory

        out.update(trajectory=PiecewiseTrajectory.from_vector(sol.c_star, allocation.durations, instance.degree),
                   status="Feasible")
        return out

    optimize = optimize_fd if name == "fd" else optimize_implicit
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = optimize(instance, allocation.durations, settings.optimizer)
    out.update(trajectory=report.trajectory(), status=report.status.value)
    return out


def _evaluate(method: str, index: int, instance: ProblemInstance, dataset: str, settings: BenchSettings,
              planner) -> InstanceResult:
    start = time.perf_counter()
    out = run_method(method, instance, settings, planner)
    comp_time_ms = (time.perf_counter() - start) * 1000.0

    traj = out["trajectory"]
    success = traj is not None and verify_trajectory(traj, instance)
    status = out["status"]
    if traj is not None and not success:
        warnings.warn(f"{method} on instance {index}: trajectory failed the constraint re-check")
        status = "RecheckFailed"
    cost, traj_time = trajectory_summary(traj, instance.kappa) if success else (float("nan"), float("nan"))
    return InstanceResult(method=method, dataset=dataset, instance=index, success=bool(success), min_control=cost,
                          traj_time=traj_time, comp_time_ms=comp_time_ms, segments=out["segments"],
                          length_miss=bool(out["length_miss"]), scalings=out["scalings"], status=status)


def run_benchmark(methods: Sequence[str], instances: Sequence[ProblemInstance], dataset: str = "dataset",
                  settings: Optional[BenchSettings] = None, planner=None,
                  verbose: bool = False) -> Tuple[List[BenchRow], List[InstanceResult]]:
    """
    Every method on every instance. Results are ordered by method, then instance,
    whatever the number of workers.
    """
    from tqdm.auto import tqdm

    settings = settings or BenchSettings()
    for method in methods:
        parse_method(method)
    jobs = [(method, i, inst) for method in methods for i, inst in enumerate(instances)]

    def job(args):
        method, i, inst = args
        return _evaluate(method, i, inst, dataset, settings, planner)

    if settings.num_workers > 1:
        with ThreadPoolExecutor(max_workers=settings.num_workers) as pool:
            results = list(tqdm(pool.map(job, jobs), total=len(jobs), disable=not verbose))
    else:
        results = [job(j) for j in tqdm(jobs, disable=not verbose)]
    return summarize(results), results


def save_results(rows: Sequence[BenchRow], results: Sequence[InstanceResult], output_path) -> Tuple[Path, Path]:
    import pandas as pd

    output_path = Path(output_path)
    output_path.mkdir(parents=True, exist_ok=True)
    summary = output_path / "bench_summary.csv"
    details = output_path / "bench_instances.csv"
    pd.DataFrame(list(rows), columns=BenchRow._fields).to_csv(summary, index=False, float_format="%.10g")
    pd.DataFrame(list(results), columns=InstanceResult._fields).to_csv(details, index=False, float_format="%.10g")
    return summary, details


def format_table(rows: Sequence[BenchRow]) -> str:
    import pandas as pd

    df = pd.DataFrame(list(rows), columns=BenchRow._fields)
    return df.to_string(index=False, float_format=lambda v: f"{v:.4g}")


def add_arguments(parser: argparse.ArgumentParser):
    from allocnet.scripts.cli import add_optimizer_arguments, add_problem_arguments, str2bool

    add_problem_arguments(parser)
    add_optimizer_arguments(parser)
    parser.add_argument("-d", "--data", type=str, nargs="*", default=[],
                        help="Dataset or instance files; instances are generated from --seed when omitted")
    parser.add_argument("-n", "--count", type=int, default=100, help="Number of generated instances")
    parser.add_argument("-m_max", "--m_max", type=int, default=3)
    parser.add_argument("-f_max", "--f_max", type=int, default=6)
    parser.add_argument("-methods", "--methods", type=str, default=None,
                        help="Comma separated list of uniform+scale, fd, implicit, allocnet:<alpha>. "
                        "Defaults to the classical methods, plus allocnet:0.5 when --model is given")
    parser.add_argument("-m", "--model", type=str, nargs="*", default=[], help="Model file(s) for allocnet methods")
    parser.add_argument("-strict", "--strict_length", default=False, type=str2bool,
                        help="Count a predicted segment count that differs from the corridor count as a failure")
    parser.add_argument("-o", "--output", type=str, default=None, help="Folder for the CSV reports")
    parser.add_argument("-device", "--device", type=str, default=None)


def _instances(args) -> List[Tuple[str, List[ProblemInstance]]]:
    from allocnet.scripts.cli import d_m, workers
    from allocnet.utils.corridor import GeneratorConfig
    from allocnet.utils.dataset import generate_dataset, load_problems

    if args.data:
        return [(Path(p).stem, load_problems(p)) for p in args.data]
    config = GeneratorConfig(num_segments_range=(1, args.m_max), m_max=args.m_max)
    records = generate_dataset(args.seed, args.count, config, kappa=args.kappa, d_m=d_m(args), n_res=args.n_res,
                               w_t=args.w_t, f_max=args.f_max, num_workers=workers(args))
    return [("generated", [r.instance for r in records])]


def run(args) -> int:
    from allocnet.scripts.cli import optimizer_settings, workers

    if args.methods is None:
        methods = list(CLASSICAL_METHODS) + (["allocnet:0.5"] if args.model else [])
    else:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    parsed = [parse_method(m) for m in methods]
    settings = BenchSettings(optimizer=optimizer_settings(args), strict_length=args.strict_length,
                             num_workers=workers(args))
    planner = None
    if any(name == "allocnet" for name, _ in parsed):
        if not args.model:
            raise ValueError("allocnet methods need --model")
        from allocnet.planner_class import AllocNet
        planner = AllocNet(args.model, device=args.device, solver_settings=settings.optimizer.solver, verbosity=0)

    rows, results = [], []
    for name, instances in _instances(args):
        r, d = run_benchmark(methods, instances, name, settings, planner, verbose=args.verbosity > 0)
        rows += r
        results += d

    if args.output is not None:
        summary, details = save_results(rows, results, args.output)
        if args.verbosity > 0:
            print(f"Saved {summary} and {details}")
    if args.verbosity > 0 and rows:
        print(format_table(rows))
    return 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip())
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == "__main__":
    main()
