#!/usr/bin/env python3
"""Regret comparison on the three canonical synthetic datasets.

Thin wrapper over the `paperfig` CLI command: runs the practical phased
variant against explore-then-commit (two exploration lengths), uniform
random, the oracle, and (on the sign-feedback dataset) collaborative greedy,
then emits CSV plus a plot script per dataset.

    python scripts/paper_comparison.py --scale 0.4 --seeds 10 --out-dir out/
"""

import argparse
import sys

from blockedbandits.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", type=float, default=0.4,
                        help="size multiplier on the 150-user / 60-round setup")
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out-dir", default="paperfig-out")
    parser.add_argument("--datasets", nargs="+", default=["d1", "d2", "d3"])
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    for name in args.datasets:
        code = cli_main(["paperfig", name, str(args.scale),
                         "--seeds", str(args.seeds),
                         "--out-dir", args.out_dir,
                         "--threads", str(args.threads)])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
