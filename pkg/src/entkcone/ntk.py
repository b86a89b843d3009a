"""Empirical NTK Gram matrices, kernel distance and kernel velocity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateKernelError, NumericError, ShapeError, UsageError
from .lintrain import LinearizedModel
from .nn import TRUE_CLASS, loss_and_grad, readout_grads, scalar_outputs

DEFAULT_CHUNK = 16


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray = field(repr=False)
    iteration: int | None = None
    rule: object = TRUE_CLASS

    @property
    def n(self):
        return self.matrix.shape[0]


def _tangent_point(model):
    # the linearized model's parameter gradient is the anchor Jacobian
    return model.anchor if isinstance(model, LinearizedModel) else model


def probe_gradients(model, probe, rule=TRUE_CLASS, chunk=DEFAULT_CHUNK):
    """Per-probe readout gradients as a list of ``(rows, p)`` blocks."""
    base = _tangent_point(model)
    blocks = []
    for start in range(0, len(probe), chunk):
        stop = min(start + chunk, len(probe))
        try:
            block = readout_grads(base, probe.inputs[start:stop], probe.labels[start:stop], rule)
        except NumericError as exc:
            bad = _first_bad_index(base, probe, rule, start, stop)
            raise NumericError(f"non-finite gradient for probe index {bad}: {exc}",
                               layer=exc.layer, index=bad) from exc
        blocks.append(block)
    return blocks


def _first_bad_index(model, probe, rule, start, stop):
    for i in range(start, stop):
        try:
            readout_grads(model, probe.inputs[i:i + 1], probe.labels[i:i + 1], rule)
        except NumericError:
            return i
    return start


def entk_gram(model, probe, rule=TRUE_CLASS, chunk=DEFAULT_CHUNK, iteration=None):
    """``H[i, j] = <grad f(x_i), grad f(x_j)>`` over the probe set.

    Gradients are stacked ``chunk`` rows at a time and multiplied block by
    block; the result is symmetrised as ``(H + H^T) / 2``.
    """
    if len(probe) == 0:
        raise UsageError("probe set is empty")
    if chunk < 1:
        raise UsageError("chunk must be positive")
    blocks = probe_gradients(model, probe, rule, chunk)
    n = len(probe)
    H = np.empty((n, n))
    offsets = np.cumsum([0] + [len(b) for b in blocks])
    for a, Ga in enumerate(blocks):
        for b, Gb in enumerate(blocks):
            H[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]] = Ga @ Gb.T
    H = 0.5 * (H + H.T)
    H.flags.writeable = False
    return GramMatrix(H, iteration, rule)


def _as_matrix(K):
    return K.matrix if isinstance(K, GramMatrix) else np.asarray(K, dtype=np.float64)


def kernel_distance(A, B):
    """``1 - Tr(A B^T) / (||A||_F ||B||_F)``, a scale-invariant dissimilarity."""
    A, B = _as_matrix(A), _as_matrix(B)
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeError(f"kernel shapes differ: {A.shape} vs {B.shape}")
    na = np.sqrt(np.sum(A * A))
    nb = np.sqrt(np.sum(B * B))
    if na == 0.0 or nb == 0.0:
        raise DegenerateKernelError("kernel distance undefined for a zero Gram matrix")
    cos = np.sum(A * B) / (na * nb)
    # Cauchy-Schwarz: cos <= 1, so only rounding can push S below zero
    return max(0.0, float(1.0 - cos))


def kernel_velocity(traj, t, dt, key=None):
    """``S(theta(t), theta(t + dt)) / dt`` from the trajectory's cached Grams."""
    if dt <= 0:
        raise UsageError("dt must be positive")
    return kernel_distance(traj.gram(t, key), traj.gram(t + dt, key)) / dt


class GramRecorder:
    """Checkpoint hook caching the Gram matrix of each checkpoint.

    Grams are stored in ``checkpoint.grams`` under ``(probe.key, str(rule))``.
    """

    def __init__(self, probe, rule=TRUE_CLASS, chunk=DEFAULT_CHUNK):
        self.probe, self.rule, self.chunk = probe, rule, chunk
        self.key = (probe.key, str(rule))

    def __call__(self, record):
        record.grams[self.key] = entk_gram(record.model, self.probe, self.rule, self.chunk,
                                           record.iteration)


def functional_dynamics_residual(model, probe, eta, rule=TRUE_CLASS, chunk=DEFAULT_CHUNK):
    """Residual of one full-batch SGD step against its first-order kernel prediction.

    Trains the probe set under ``mse-on-readout`` (targets from the probe, zero
    by default) and returns ``||du + eta * H g||`` where ``g`` is the loss
    gradient with respect to the probe outputs ``u``.
    """
    X, y = probe.inputs, probe.labels
    t = np.zeros(len(probe)) if probe.targets is None else probe.targets
    u0 = scalar_outputs(model, X, y, rule)
    g = (u0 - t) / len(probe)
    H = entk_gram(model, probe, rule, chunk).matrix
    _, grad = loss_and_grad(model, X, y, "mse-on-readout", rule, t)
    u1 = scalar_outputs(model.with_params(model.params - eta * grad), X, y, rule)
    return float(np.linalg.norm((u1 - u0) + eta * (H @ g)))
