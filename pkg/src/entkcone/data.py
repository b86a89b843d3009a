"""Datasets: IDX parsing, synthetic blobs and probe-set sampling."""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, FormatError, LengthError, UsageError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
TEST_SEED_OFFSET = 1_000_003


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ``(inputs, labels)`` table.

    ``targets`` holds optional real regression targets for the
    ``mse-on-readout`` loss; ``None`` means all zeros.
    """

    inputs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    name: str = "dataset"
    n_classes: int | None = None
    targets: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or len(inputs) != len(labels):
            raise UsageError(
                f"inputs {inputs.shape} and labels {labels.shape} do not line up")
        c = self.n_classes
        if c is None:
            c = int(labels.max()) + 1 if labels.size else 1
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise UsageError(f"labels outside [0, {c})")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", c)
        if self.targets is not None:
            targets = np.array(self.targets, dtype=np.float64)
            if targets.shape != labels.shape:
                raise UsageError("targets must have one entry per example")
            targets.flags.writeable = False
            object.__setattr__(self, "targets", targets)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.inputs[indices], self.labels[indices], name or self.name, self.n_classes,
            None if self.targets is None else self.targets[indices])


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Fixed examples on which every Gram matrix is measured."""

    indices: np.ndarray
    inputs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    targets: np.ndarray | None = field(default=None, repr=False)
    source: str = "train"

    def __len__(self):
        return len(self.indices)

    @property
    def key(self):
        digest = hashlib.sha256(self.indices.tobytes()).hexdigest()[:12]
        return f"{self.source}:{len(self)}:{digest}"


# ---------------------------------------------------------------- IDX


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw, expected_magic):
    """Decode an unsigned-byte IDX buffer into an array shaped by its header."""
    if len(raw) < 4:
        raise LengthError(f"IDX buffer too short for a magic number ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"bad IDX magic 0x{magic:08X}, expected 0x{expected_magic:08X}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LengthError(f"IDX header truncated: need {header} bytes, have {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload != expected:
        raise LengthError(f"IDX payload has {payload} bytes, header declares {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name=None, n_classes=10):
    """Load an IDX image/label pair (optionally gzipped) as a Dataset.

    Pixels are scaled to [0, 1] by dividing by 255; no other normalisation.
    """
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if len(images) != len(labels):
        raise LengthError(f"{len(images)} images but {len(labels)} labels")
    inputs = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels, name or str(images_path), n_classes)


def encode_idx(array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise UsageError("IDX encoding supports unsigned bytes only")
    magic = 0x00000800 | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def write_idx(path, array, compress=None):
    data = encode_idx(array)
    if compress or (compress is None and str(path).endswith(".gz")):
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as fh:
        fh.write(data)


def load_mnist5k(split="train"):
    """Bundled 5,000-image MNIST subset: 4,000 train / 1,000 test, class balanced."""
    if split not in ("train", "test"):
        raise UsageError(f"unknown split {split!r}")
    root = resources.files("entkcone") / "_data"
    with resources.as_file(root / f"mnist5k-{split}-images-idx3-ubyte.gz") as img, \
            resources.as_file(root / f"mnist5k-{split}-labels-idx1-ubyte.gz") as lab:
        return load_idx(img, lab, name=f"mnist5k-{split}")


# ---------------------------------------------------------------- synthetic


def blob_centers(d0, c, separation=10.0):
    """Deterministic class centers with pairwise (or adjacent) distance ``separation``."""
    centers = np.zeros((c, d0))
    if c <= d0:
        centers[np.arange(c), np.arange(c)] = separation / np.sqrt(2.0)
    elif d0 >= 2:
        radius = separation / (2.0 * np.sin(np.pi / c))
        angle = 2.0 * np.pi * np.arange(c) / c
        centers[:, 0] = radius * np.cos(angle)
        centers[:, 1] = radius * np.sin(angle)
    else:
        centers[:, 0] = separation * (np.arange(c) - (c - 1) / 2.0)
    return centers


def synth_blobs(seed, n_per_class, d0, c, spread, separation=10.0, name="blobs"):
    if c < 2:
        raise ConfigError("synthetic blobs need at least two classes")
    if spread < 0 or n_per_class < 1 or d0 < 1:
        raise ConfigError("invalid blob parameters")
    rng = np.random.default_rng(seed)
    centers = blob_centers(d0, c, separation)
    labels = np.repeat(np.arange(c), n_per_class)
    inputs = centers[labels] + spread * rng.standard_normal((len(labels), d0))
    return Dataset(inputs, labels, name, c)


def synth_blobs_split(seed, n_per_class, d0, c, spread, separation=10.0, n_test_per_class=None):
    """Train set from ``seed`` and a test set from a derived seed."""
    train = synth_blobs(seed, n_per_class, d0, c, spread, separation, "blobs-train")
    test = synth_blobs(seed + TEST_SEED_OFFSET, n_test_per_class or n_per_class, d0, c,
                       spread, separation, "blobs-test")
    return train, test


# ---------------------------------------------------------------- probes


def probe_sample(dataset, n_probe, seed, stratified=False, source="train"):
    """Sample probe examples without replacement; indices come back sorted."""
    n_total = len(dataset)
    if n_probe > n_total:
        raise UsageError(f"probe size {n_probe} exceeds dataset size {n_total}")
    if n_probe < 2:
        raise UsageError("probe set needs at least two examples")
    rng = np.random.default_rng(seed)
    if not stratified:
        idx = rng.choice(n_total, size=n_probe, replace=False)
    else:
        c = dataset.n_classes
        counts = np.full(c, n_probe // c)
        counts[: n_probe % c] += 1
        parts = []
        for k in range(c):
            members = np.flatnonzero(dataset.labels == k)
            if counts[k] > len(members):
                raise UsageError(f"class {k} has {len(members)} examples, need {counts[k]}")
            parts.append(rng.choice(members, size=counts[k], replace=False))
        idx = np.concatenate(parts)
    idx = np.sort(idx).astype(np.int64)
    idx.flags.writeable = False
    return ProbeSet(idx, dataset.inputs[idx], dataset.labels[idx],
                    None if dataset.targets is None else dataset.targets[idx], source)
