"""
Generate a synthetic corridor dataset labelled with reference time allocations.
"""

import argparse
from pathlib import Path


def add_arguments(parser: argparse.ArgumentParser):
    from allocnet.scripts.cli import add_problem_arguments

    add_problem_arguments(parser)
    parser.add_argument("-o", "--output", type=str, required=True, help="Dataset file to write (JSON lines)")
    parser.add_argument("-n", "--count", type=int, default=200, help="Number of records")
    parser.add_argument("-m_max", "--m_max", type=int, default=3, help="Largest number of corridors per record")
    parser.add_argument("-m_min", "--m_min", type=int, default=1, help="Smallest number of corridors per record")
    parser.add_argument("-f_max", "--f_max", type=int, default=6, help="Faces per corridor after padding")


def generator_config(args):
    from allocnet.utils.corridor import GeneratorConfig

    return GeneratorConfig(num_segments_range=(args.m_min, args.m_max), m_max=args.m_max)


def run(args) -> int:
    from allocnet.scripts.cli import d_m, workers
    from allocnet.utils.dataset import generate_dataset, save_dataset

    records = generate_dataset(args.seed, args.count, generator_config(args), kappa=args.kappa, d_m=d_m(args),
                               n_res=args.n_res, w_t=args.w_t, f_max=args.f_max, num_workers=workers(args),
                               verbose=args.verbosity > 0)
    path = save_dataset(records, Path(args.output))
    if args.verbosity > 0:
        print(f"Saved {len(records)} records to {path}")
    return 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip())
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == "__main__":
    main()
