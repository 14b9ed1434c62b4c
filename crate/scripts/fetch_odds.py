#!/usr/bin/env python3
"""Convert ODDS benchmark files (.mat) to the CSV layout read by `tiws`.

Each input is a local path or an http(s) URL to a .mat file holding a
feature matrix `X` and a 0/1 column `y`. Output is `<out>/<stem>.csv` with
columns f0..f{d-1},label.

    python3 scripts/fetch_odds.py --out data/ breastw.mat cover.mat
    python3 scripts/fetch_odds.py --out data/ https://example.org/odds/wbc.mat

Needs numpy and scipy; files saved in MATLAB v7.3 format also need h5py.
"""

import argparse
import csv
import sys
import tempfile
import urllib.request
from pathlib import Path

import numpy as np
import scipy.io


def load_mat(path):
    try:
        m = scipy.io.loadmat(path)
        return np.asarray(m["X"], dtype=float), np.asarray(m["y"]).ravel()
    except NotImplementedError:
        import h5py  # v7.3 files are HDF5, stored transposed

        with h5py.File(path, "r") as f:
            return np.asarray(f["X"], dtype=float).T, np.asarray(f["y"]).ravel()


def fetch(src, workdir):
    if src.startswith(("http://", "https://")):
        name = Path(src.split("?")[0]).name or "dataset.mat"
        dest = Path(workdir) / name
        urllib.request.urlretrieve(src, dest)
        return dest
    return Path(src)


def convert(path, out_dir):
    x, y = load_mat(path)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"{path}: X is {x.shape}, y has {len(y)} entries")
    if not np.isfinite(x).all():
        raise ValueError(f"{path}: non-finite feature values")
    labels = y.astype(int)
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError(f"{path}: labels are not 0/1")

    dest = out_dir / f"{Path(path).stem}.csv"
    with open(dest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{j}" for j in range(x.shape[1])] + ["label"])
        for row, label in zip(x, labels):
            w.writerow([repr(float(v)) for v in row] + [label])
    return dest, x.shape, int(labels.sum())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("sources", nargs="+", help=".mat paths or URLs")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    failed = 0
    with tempfile.TemporaryDirectory() as tmp:
        for src in args.sources:
            try:
                dest, (n, d), anomalies = convert(fetch(src, tmp), args.out)
                print(f"{dest}: {n} rows, {d} features, {anomalies} anomalies")
            except Exception as e:  # keep converting the rest
                print(f"error: {src}: {e}", file=sys.stderr)
                failed += 1
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
