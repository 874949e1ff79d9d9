#!/usr/bin/env python3
"""Run one of the robustness studies and write its records, figure data and
property checks under an output directory.

Examples:
    python3 scripts/run_study.py contamination --trials 10 --out-dir out/contamination
    python3 scripts/run_study.py coverage --trials 50 --out-dir out/coverage
    python3 scripts/run_study.py realdata --data data/diabetes.csv \
        --response progression --out-dir out/diabetes
"""

import sys

from medpost.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment"] + sys.argv[1:]))
