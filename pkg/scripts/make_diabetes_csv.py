#!/usr/bin/env python3
"""Write data/diabetes.csv (442 rows, 10 predictors + response).

Uses the classic diabetes regression dataset in raw units as shipped with
scikit-learn; the analysis pipeline standardizes the predictors itself.
"""

import argparse
import csv
from pathlib import Path


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/diabetes.csv")
    args = parser.parse_args()
    try:
        from sklearn.datasets import load_diabetes
    except ImportError:
        raise SystemExit("scikit-learn is required: pip install scikit-learn")
    bunch = load_diabetes(scaled=False)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(bunch.feature_names) + ["progression"])
        for row, target in zip(bunch.data, bunch.target):
            writer.writerow([repr(float(v)) for v in row]
                            + [repr(float(target))])
    print(f"wrote {len(bunch.target)} rows to {path}")


if __name__ == "__main__":
    main()
