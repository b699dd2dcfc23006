"""Time and memory of RandMS against 50-split MDS over a ladder of p.

Writes the raw rows and the per-(p, method) table next to each other.

    python3 scripts/benchmark_ladder.py --out runs/benchmark.csv --repetitions 3
"""

import argparse
import sys

from mirrorfdr.cli import DEFAULT_LADDER, cmd_benchmark


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/benchmark.csv")
    ap.add_argument("--p", type=int, nargs="+", default=list(DEFAULT_LADDER))
    ap.add_argument("--repetitions", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    return cmd_benchmark(args.out, p_values=tuple(args.p), repetitions=args.repetitions, seed=args.seed)


if __name__ == "__main__":
    sys.exit(run())
