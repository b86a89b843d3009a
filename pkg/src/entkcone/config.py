"""Experiment configuration: flat ``section.key = value`` text files.

Keys are order-insensitive, ``#`` starts a comment, lists are
comma-separated and unset optional keys are simply absent. ``dumps``
writes the canonical form (sorted keys) that ``config_hash`` digests.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .errors import ConfigError
from .nn import ArchSpec, ReadoutRule
from .train import TrainConfig


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# dotted key -> (attribute, parser)
_SCHEMA = {
    "seed": ("seed", int),
    "data.source": ("data_source", str),
    "data.train_images": ("data_train_images", str),
    "data.train_labels": ("data_train_labels", str),
    "data.test_images": ("data_test_images", str),
    "data.test_labels": ("data_test_labels", str),
    "data.limit": ("data_limit", int),
    "data.blobs_per_class": ("blobs_per_class", int),
    "data.blobs_dim": ("blobs_dim", int),
    "data.blobs_classes": ("blobs_classes", int),
    "data.blobs_spread": ("blobs_spread", float),
    "data.blobs_separation": ("blobs_separation", float),
    "arch.kind": ("arch_kind", str),
    "arch.widths": ("arch_widths", _ints),
    "arch.activation": ("arch_activation", str),
    "train.lr": ("lr", float),
    "train.momentum": ("momentum", float),
    "train.batch_size": ("batch_size", int),
    "train.iterations": ("iterations", int),
    "train.checkpoint_every": ("checkpoint_every", int),
    "train.checkpoints": ("checkpoints", _ints),
    "train.loss": ("loss", str),
    "train.shuffle_seed": ("shuffle_seed", int),
    "probe.size": ("probe_size", int),
    "probe.seed": ("probe_seed", int),
    "probe.stratified": ("probe_stratified", _bool),
    "probe.split": ("probe_split", str),
    "readout.mode": ("readout", str),
    "measure.taus": ("taus", _ints),
    "measure.dts": ("dts", _ints),
    "measure.rho": ("rho", float),
    "measure.window": ("window", int),
    "measure.chunk": ("chunk", int),
    "switch.grid": ("switch_grid", _ints),
    "switch.horizon": ("switch_horizon", int),
    "output.dir": ("out_dir", str),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _) in _SCHEMA.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data_source: str = "mnist5k"
    data_train_images: str | None = None
    data_train_labels: str | None = None
    data_test_images: str | None = None
    data_test_labels: str | None = None
    data_limit: int | None = None
    blobs_per_class: int = 100
    blobs_dim: int = 2
    blobs_classes: int = 2
    blobs_spread: float = 1.0
    blobs_separation: float = 10.0
    arch_kind: str = "lenet"
    arch_widths: tuple = (6, 16, 120, 84, 10)
    arch_activation: str = "relu"
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    iterations: int = 3000
    checkpoint_every: int = 50
    checkpoints: tuple | None = None
    loss: str = "cross-entropy"
    shuffle_seed: int | None = None
    probe_size: int = 64
    probe_seed: int | None = None
    probe_stratified: bool = True
    probe_split: str = "train"
    readout: str = "true-class-logit"
    taus: tuple = (250, 500, 750, 1000)
    dts: tuple = (50, 100, 200)
    rho: float = 0.2
    window: int = 3
    chunk: int = 16
    switch_grid: tuple = (0, 500, 1000, 2000, 3000)
    switch_horizon: int | None = None
    out_dir: str = "runs/default"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- derived views

    @property
    def init_seed(self):
        return self.seed

    @property
    def resolved_shuffle_seed(self):
        return self.seed + 1 if self.shuffle_seed is None else self.shuffle_seed

    @property
    def resolved_probe_seed(self):
        return self.seed + 2 if self.probe_seed is None else self.probe_seed

    @property
    def horizon(self):
        return self.iterations if self.switch_horizon is None else self.switch_horizon

    @property
    def readout_rule(self):
        return ReadoutRule.parse(self.readout)

    def arch_spec(self, input_dim, n_classes):
        return ArchSpec(self.arch_kind, self.arch_widths, self.arch_activation,
                        input_dim, n_classes)

    def train_config(self, iterations=None):
        return TrainConfig(
            lr=self.lr, momentum=self.momentum, batch_size=self.batch_size,
            iterations=self.iterations if iterations is None else iterations,
            shuffle_seed=self.resolved_shuffle_seed, checkpoints=self.checkpoints,
            checkpoint_every=self.checkpoint_every, loss=self.loss,
            readout=self.readout_rule)

    def validate(self):
        """Check cross-field consistency; raises ConfigError."""
        if self.data_source not in ("mnist5k", "idx", "blobs"):
            raise ConfigError(f"unknown data.source {self.data_source!r}")
        if self.data_source == "idx" and not (self.data_train_images and self.data_train_labels):
            raise ConfigError("data.source = idx needs data.train_images and data.train_labels")
        if self.probe_split not in ("train", "test"):
            raise ConfigError("probe.split must be train or test")
        if self.probe_size < 2:
            raise ConfigError("probe.size must be at least 2")
        if not 0 < self.rho < 1 or self.window < 1 or self.chunk < 1:
            raise ConfigError("need 0 < measure.rho < 1, measure.window >= 1, measure.chunk >= 1")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        self.readout_rule
        try:
            cfg = self.train_config()
        except ConfigError as exc:
            raise ConfigError(f"train section: {exc}") from None
        grid = cfg.schedule()
        for tau in self.taus:
            if tau not in grid:
                raise ConfigError(f"measure.taus entry {tau} is not a checkpoint iteration")
        spacing = self.checkpoint_every if self.checkpoints is None else None
        for dt in self.dts:
            if dt <= 0 or (spacing and dt % spacing):
                raise ConfigError(f"measure.dts entry {dt} is not a multiple of the checkpoint spacing")
        if any(t < 0 or t > self.horizon for t in self.switch_grid):
            raise ConfigError(f"switch.grid entries must lie in [0, {self.horizon}]")
        return self


def loads(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, parser = _SCHEMA[key]
        if attr in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(**values)


def dumps(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        lines.append(f"{_ATTR_TO_KEY[f.name]} = {_fmt(value)}")
    return "\n".join(sorted(lines)) + "\n"


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def config_hash(cfg):
    """Short digest of everything that affects results (the output directory does not)."""
    return hashlib.sha256(dumps(cfg.replace(out_dir="")).encode()).hexdigest()[:16]
