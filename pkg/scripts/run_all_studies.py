#!/usr/bin/env python3
"""Reproduce the full study suite at its reference sizes.

Writes one subdirectory per study under --out-dir. Budget roughly half an
hour on a few cores; individual studies can be run separately through
scripts/run_study.py with smaller --trials for a quick look.
"""

import argparse
import sys
from pathlib import Path

from medpost.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--diabetes", default="data/diabetes.csv")
    args = parser.parse_args()
    out = Path(args.out_dir)

    studies = [
        ["contamination", "--trials", "10"],
        ["magnitude", "--trials", "10"],
        ["coverage", "--trials", "50"],
        ["coef_coverage", "--trials", "20"],
        ["bigdata", "--trials", "1", "--n-train", "100000"],
        ["realdata", "--data", args.diabetes, "--response", "progression"],
    ]
    for study in studies:
        kind = study[0]
        print(f"=== {kind} ===", flush=True)
        rc = cli_main(["experiment", *study, "--seed", str(args.seed),
                       "--out-dir", str(out / kind)])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
