"""Run bundled simulation presets through the CLI, one output directory each.

    python3 scripts/run_presets.py                    # every preset
    python3 scripts/run_presets.py paper_replication --out runs --threads 4
"""

import argparse
import sys
from pathlib import Path

from mirrorfdr.cli import PRESETS, main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("presets", nargs="*", help="preset names (default: all)")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--threads", type=int)
    args = ap.parse_args(argv)
    names = args.presets or sorted(p.stem for p in PRESETS.glob("*.json"))
    status = 0
    for name in names:
        cmd = ["simulate", "--config", name, "--out", str(Path(args.out) / name)]
        if args.threads:
            cmd += ["--threads", str(args.threads)]
        print(f"== {name}", flush=True)
        status = main(cmd) or status
        if status == 130:
            break
    return status


if __name__ == "__main__":
    sys.exit(run())
