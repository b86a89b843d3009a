"""Rebuild the bundled mnist5k IDX files from mlxtend's 5,000-image MNIST sample.

The CSV ships inside the mlxtend wheel (``mlxtend/data/data/mnist_5k.csv.gz``,
500 images per digit, sorted by label). The first 400 images of each digit
become the train split and the remaining 100 the test split.

    python scripts/build_mnist5k.py path/to/mnist_5k.csv.gz
"""

import gzip
import sys
from pathlib import Path

import numpy as np

from entkcone.data import write_idx

OUT = Path(__file__).resolve().parents[1] / "src" / "entkcone" / "_data"
TRAIN_PER_CLASS = 400


def main(csv_path):
    with gzip.open(csv_path, "rt") if csv_path.endswith(".gz") else open(csv_path) as fh:
        table = np.loadtxt(fh, delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    train, test = [], []
    for k in range(10):
        members = np.flatnonzero(labels == k)
        train.extend(members[:TRAIN_PER_CLASS])
        test.extend(members[TRAIN_PER_CLASS:])
    for split, idx in (("train", train), ("test", test)):
        idx = np.asarray(idx)
        write_idx(OUT / f"mnist5k-{split}-images-idx3-ubyte.gz", pixels[idx])
        write_idx(OUT / f"mnist5k-{split}-labels-idx1-ubyte.gz", labels[idx])
        print(split, len(idx))


if __name__ == "__main__":
    main(sys.argv[1])
