#!/usr/bin/env python3
"""Write the diabetes data set (442 patients, 10 baseline variables) as a
whitespace-delimited table with columns

    age sex bmi map tc ldl hdl tch ltg glu y

The raw (unscaled) values are taken from scikit-learn's bundled copy when it
is installed; otherwise the original tab-separated file is downloaded.

Usage: python3 scripts/fetch_diabetes.py [OUTPUT]   (default: diabetes.txt)
"""

import sys
import urllib.request

import numpy as np

NAMES = ["age", "sex", "bmi", "map", "tc", "ldl", "hdl", "tch", "ltg", "glu", "y"]
URL = "https://www4.stat.ncsu.edu/~boos/var.select/diabetes.tab.txt"


def from_sklearn():
    from sklearn.datasets import load_diabetes

    d = load_diabetes(scaled=False)
    return np.column_stack([d.data, d.target])


def from_url():
    with urllib.request.urlopen(URL, timeout=30) as resp:
        lines = resp.read().decode().splitlines()
    return np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()])


def main(argv):
    out = argv[1] if len(argv) > 1 else "diabetes.txt"
    try:
        table = from_sklearn()
    except ImportError:
        table = from_url()
    if table.shape != (442, 11):
        sys.exit(f"unexpected table shape {table.shape}")
    with open(out, "w") as fh:
        fh.write(" ".join(NAMES) + "\n")
        for row in table:
            fh.write(" ".join(f"{v:.10g}" for v in row) + "\n")
    print(f"wrote {out}: {table.shape[0]} rows")


if __name__ == "__main__":
    main(sys.argv)
