"""On-disk formats: atomic writes, CSV tables and binary checkpoint vectors.

Binary vectors are an 8-byte little-endian unsigned count followed by that
many little-endian float64 values.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthError

INDEX_NAME = "index.csv"


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header, rows, config_hash=None):
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, config_hash=None):
    atomic_write(path, csv_text(header, rows, config_hash))


def read_csv(path):
    """Return ``(comment_lines, header, rows)``; rows are lists of strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    table = list(csv.reader(body))
    return comments, table[0], table[1:]


def encode_vector(vec):
    vec = np.ascontiguousarray(vec, dtype="<f8").ravel()
    return struct.pack("<Q", vec.size) + vec.tobytes()


def decode_vector(raw):
    if len(raw) < 8:
        raise LengthError("vector file shorter than its length header")
    (count,) = struct.unpack("<Q", raw[:8])
    if len(raw) - 8 != 8 * count:
        raise LengthError(f"vector payload has {len(raw) - 8} bytes, header declares {8 * count}")
    return np.frombuffer(raw, dtype="<f8", offset=8).astype(np.float64)


def save_vector(path, vec):
    atomic_write(path, encode_vector(vec))


def load_vector(path):
    with open(path, "rb") as fh:
        return decode_vector(fh.read())


def save_trajectory(directory, log, gram_key, config_hash=None):
    """Write one params file and one Gram file per checkpoint plus an index."""
    directory = Path(directory)
    rows = []
    for rec in log:
        stem = f"iter_{rec.iteration:08d}"
        save_vector(directory / f"{stem}.params.bin", rec.model.params)
        gram_file = ""
        n_probe = 0
        if gram_key in rec.grams:
            gram = rec.grams[gram_key].matrix
            gram_file = f"{stem}.gram.bin"
            n_probe = gram.shape[0]
            save_vector(directory / gram_file, gram)
        rows.append((rec.iteration, f"{stem}.params.bin", gram_file, n_probe,
                     rec.train_loss, rec.train_accuracy))
    write_csv(directory / INDEX_NAME,
              ("t", "params_file", "gram_file", "n_probe", "train_loss", "train_accuracy"),
              rows, config_hash)


def load_trajectory_index(directory):
    """Read back ``(t, params, gram or None, train_loss, train_accuracy)`` tuples."""
    directory = Path(directory)
    _, header, rows = read_csv(directory / INDEX_NAME)
    if header[:3] != ["t", "params_file", "gram_file"]:
        raise FormatError(f"unexpected checkpoint index header {header}")
    out = []
    for t, pfile, gfile, n_probe, loss, acc in rows:
        params = load_vector(directory / pfile)
        gram = None
        if gfile:
            n = int(n_probe)
            gram = load_vector(directory / gfile).reshape(n, n)
        out.append((int(t), params, gram, float(loss), float(acc)))
    return out
