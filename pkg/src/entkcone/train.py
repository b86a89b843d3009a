"""Deterministic minibatch SGD with momentum and checkpointing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointMissing, ConfigError, DivergenceError, UsageError
from .nn import LOSSES, TRUE_CLASS, ReadoutRule, loss_from_logits, raw_loss_and_grad

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters and checkpoint schedule.

    ``checkpoints`` is an explicit iteration list; when it is ``None`` the
    schedule is every ``checkpoint_every`` iterations plus ``{0, T}``.
    """

    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    iterations: int = 3000
    shuffle_seed: int = 0
    checkpoints: tuple | None = None
    checkpoint_every: int = 50
    loss: str = "cross-entropy"
    readout: ReadoutRule = TRUE_CLASS

    def __post_init__(self):
        if self.checkpoints is not None:
            object.__setattr__(self, "checkpoints", tuple(int(t) for t in self.checkpoints))
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be nonnegative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.iterations < 0:
            raise ConfigError("iteration count must be nonnegative")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint spacing must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.checkpoints is not None:
            cps = self.checkpoints
            if list(cps) != sorted(set(cps)) or (cps and (cps[0] < 0 or cps[-1] > self.iterations)):
                raise ConfigError("checkpoint schedule must be sorted, unique and within [0, T]")

    def schedule(self, start=0):
        """Checkpoint iterations in ``[start, T]``."""
        if self.checkpoints is not None:
            cps = set(self.checkpoints)
        else:
            cps = set(range(0, self.iterations + 1, self.checkpoint_every))
            cps.add(self.iterations)
        return sorted(t for t in cps if start <= t <= self.iterations)

    def replace(self, **changes):
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return TrainConfig(**values)


@dataclass
class Checkpoint:
    iteration: int
    model: object
    train_loss: float
    train_accuracy: float
    grams: dict = field(default_factory=dict)


class TrajectoryLog:
    """Ordered checkpoints of one run, with run metadata."""

    def __init__(self, records=(), metadata=None):
        self.records = []
        self.metadata = dict(metadata or {})
        for rec in records:
            self.append(rec)

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise UsageError("checkpoint iterations must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def iterations(self):
        return [rec.iteration for rec in self.records]

    @property
    def final(self):
        return self.records[-1]

    def at(self, t):
        for rec in self.records:
            if rec.iteration == t:
                return rec
        raise CheckpointMissing(t)

    def gram_key(self, key=None):
        """Resolve which cached Gram family to use when ``key`` is omitted."""
        if key is not None:
            return key
        keys = {k for rec in self.records for k in rec.grams}
        if len(keys) != 1:
            raise UsageError(f"trajectory caches {len(keys)} Gram families; pass a key")
        return keys.pop()

    def gram(self, t, key=None):
        rec = self.at(t)
        key = self.gram_key(key)
        if key not in rec.grams:
            raise CheckpointMissing(t, "cached Gram matrix")
        return rec.grams[key]


class BatchStream:
    """Endless minibatch index stream: a fresh permutation every epoch.

    Batches that reach past the end of an epoch continue into the next
    permutation. A batch size covering the whole dataset yields the natural
    order every step, so full-batch steps are exact gradient steps.
    """

    def __init__(self, n, seed):
        self.n = n
        self.rng = np.random.default_rng(seed)
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self, batch_size):
        if batch_size >= self.n:
            return np.arange(self.n)
        out = []
        need = batch_size
        while need:
            if self._pos == len(self._perm):
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
            take = min(need, len(self._perm) - self._pos)
            out.append(self._perm[self._pos:self._pos + take])
            self._pos += take
            need -= take
        return np.concatenate(out)


def accuracy_from_logits(logits, labels):
    # np.argmax breaks ties toward the lowest index
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model, data):
    """Mean cross-entropy and argmax accuracy of ``model`` on ``data``."""
    logits = model.logits(data.inputs)
    loss, _ = loss_from_logits(logits, data.labels)
    return loss, accuracy_from_logits(logits, data.labels)


def objective(model, data, cfg):
    """Full-data value of the training loss together with accuracy."""
    logits = model.logits(data.inputs)
    loss, _ = loss_from_logits(logits, data.labels, cfg.loss, cfg.readout, data.targets)
    return loss, accuracy_from_logits(logits, data.labels)


@dataclass
class SGDState:
    """Mutable optimizer state carried between training legs."""

    stream: BatchStream
    velocity: np.ndarray | None = None
    iteration: int = 0


def sgd_loop(params, grad_fn, make_model, data, cfg, hooks=(), state=None, log=None):
    """Run SGD with momentum from ``state.iteration`` up to ``cfg.iterations``.

    ``grad_fn(params, idx)`` returns the minibatch loss and gradient;
    ``make_model(params)`` wraps a parameter vector for checkpointing.
    """
    if state is None:
        state = SGDState(BatchStream(len(data), cfg.shuffle_seed))
    if log is None:
        log = TrajectoryLog()
    params = np.array(params, dtype=np.float64)
    v = np.zeros_like(params) if state.velocity is None else state.velocity.copy()
    schedule = set(cfg.schedule(state.iteration))
    t = state.iteration

    def checkpoint():
        model = make_model(params)
        loss, acc = objective(model, data, cfg)
        rec = Checkpoint(t, model, loss, acc)
        for hook in hooks:
            hook(rec)
        log.append(rec)

    if t in schedule:
        checkpoint()
    while t < cfg.iterations:
        idx = state.stream.next(cfg.batch_size)
        loss, grad = grad_fn(params, idx)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT or not np.all(np.isfinite(grad)):
            raise DivergenceError(t, loss)
        v = cfg.momentum * v + grad
        params = params - cfg.lr * v
        t += 1
        if t in schedule:
            checkpoint()
    state.velocity = v
    state.iteration = t
    return log, params


def train(model, data, cfg, hooks=(), state=None):
    """Train ``model`` on ``data`` with SGD(+momentum); returns the trajectory.

    Updates are ``v <- momentum * v + grad`` then ``theta <- theta - lr * v``.
    Checkpoints are immutable ``ModelState`` copies; ``hooks`` run on each
    checkpoint before it is logged.
    """
    if data.dim != model.arch.input_dim:
        raise UsageError(f"data dimension {data.dim} does not match d0={model.arch.input_dim}")
    X, y, targets = data.inputs, data.labels, data.targets

    def grad_fn(params, idx):
        return raw_loss_and_grad(model.arch, params, X[idx], y[idx], cfg.loss, cfg.readout,
                                 None if targets is None else targets[idx])

    log = TrajectoryLog(metadata={"mode": "standard", "seed": model.seed, "config": cfg})
    log, _ = sgd_loop(model.params, grad_fn, model.with_params, data, cfg, hooks, state, log)
    return log
