"""Full variant-comparison sweep on all three stream kinds.

Runs every method variant over the given seeds on heterogeneous, similar, and
dissimilar 10-task streams, writes one report directory per stream kind, and
prints the cross-variant summaries.

Usage: python3 scripts/run_benchmark.py [--seeds 1,2,3] [--tasks 10] [--out runs]
"""

import argparse
import sys
import time

from tss.cli import ExperimentConfig, StreamConfig, run_command
from tss.trainer import Variant


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="1,2,3")
    parser.add_argument("--tasks", type=int, default=10)
    parser.add_argument("--out", default="runs")
    args = parser.parse_args()

    t0 = time.time()
    for kind in ("heterogeneous", "similar", "dissimilar"):
        cfg = ExperimentConfig(
            stream=StreamConfig(kind=kind, n_tasks=args.tasks),
            variants=[v.value for v in Variant],
            seeds=[int(s) for s in args.seeds.split(",")],
            out=f"{args.out}/{kind}",
        )
        print(f"\n=== {kind} stream ===")
        code = run_command(cfg)
        if code != 0:
            return code
    print(f"\ntotal {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
