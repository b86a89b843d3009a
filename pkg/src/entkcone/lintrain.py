"""Linearized (lazy) training around an anchor and the std -> lin switching run."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .nn import ModelState, jvp, raw_linearized_loss_and_grad
from .train import BatchStream, SGDState, TrajectoryLog, evaluate, sgd_loop, train


@dataclass(frozen=True, eq=False)
class LinearizedModel:
    """First-order expansion ``f(x; anchor) + J(x; anchor) delta`` of every logit."""

    anchor: ModelState
    delta: np.ndarray = field(repr=False)

    def __post_init__(self):
        delta = np.array(self.delta, dtype=np.float64)
        if delta.shape != (self.anchor.n_params,):
            raise ShapeError(f"delta must have shape ({self.anchor.n_params},)")
        delta.flags.writeable = False
        object.__setattr__(self, "delta", delta)

    @property
    def arch(self):
        return self.anchor.arch

    @property
    def n_params(self):
        return self.anchor.n_params

    @property
    def params(self):
        """Equivalent flat parameter vector ``anchor + delta``."""
        return self.anchor.params + self.delta

    def anchor_outputs(self, X):
        return self.anchor.logits(X)

    def logits(self, X):
        y0, dy = jvp(self.anchor, X, self.delta)
        return y0 + dy

    def with_delta(self, delta):
        return LinearizedModel(self.anchor, delta)


def linearize(anchor):
    return LinearizedModel(anchor, np.zeros(anchor.n_params))


def train_linearized(lin, data, cfg, hooks=(), state=None):
    """SGD on ``delta`` with the anchor (and hence the Jacobian) frozen."""
    if data.dim != lin.arch.input_dim:
        raise UsageError(f"data dimension {data.dim} does not match d0={lin.arch.input_dim}")
    arch, anchor_params = lin.arch, lin.anchor.params
    X, y, targets = data.inputs, data.labels, data.targets

    def grad_fn(delta, idx):
        return raw_linearized_loss_and_grad(
            arch, anchor_params, delta, X[idx], y[idx], cfg.loss, cfg.readout,
            None if targets is None else targets[idx])

    log = TrajectoryLog(metadata={"mode": "linearized", "seed": lin.anchor.seed, "config": cfg})
    log, _ = sgd_loop(lin.delta, grad_fn, lin.with_delta, data, cfg, hooks, state, log)
    return log


@dataclass
class SwitchResult:
    t_switch: int
    test_loss: float
    test_accuracy: float
    log: TrajectoryLog


def switch_experiment(model, train_data, test_data, cfg, t_switch, horizon, hooks=()):
    """Standard training to ``t_switch``, then linearized training to ``horizon``.

    The second leg anchors at the first leg's final parameters and continues
    the same shuffle stream and momentum buffer with the same hyperparameters.
    """
    if not 0 <= t_switch <= horizon:
        raise UsageError(f"switch iteration {t_switch} outside [0, {horizon}]")
    cfg = cfg.replace(iterations=horizon)
    state = SGDState(BatchStream(len(train_data), cfg.shuffle_seed))
    first = train(model, train_data, cfg.replace(
        iterations=t_switch, checkpoints=_leg_schedule(cfg, 0, t_switch)), hooks, state)
    final_model = first.final.model
    log = TrajectoryLog(first.records, {"mode": "switch", "t_switch": t_switch,
                                        "horizon": horizon, "config": cfg})
    if t_switch < horizon:
        lin = linearize(final_model)
        second = train_linearized(lin, train_data, cfg.replace(
            checkpoints=_leg_schedule(cfg, t_switch, horizon)[1:]), hooks, state)
        for rec in second.records:
            log.append(rec)
        final_model = second.final.model
    loss, acc = evaluate(final_model, test_data)
    return SwitchResult(t_switch, loss, acc, log)


def _leg_schedule(cfg, start, stop):
    cps = [t for t in cfg.schedule() if start <= t <= stop]
    for t in (start, stop):
        if t not in cps:
            cps.append(t)
    return tuple(sorted(cps))
