"""Small numpy network engine: MLP, linear and LeNet-style CNN.

Every layer implements a forward pass, a reverse pass (summed or
per-sample parameter gradients) and a forward tangent pass, all on a flat
float64 parameter vector. Nothing here holds mutable state; a model is an
``ArchSpec`` plus a read-only parameter vector.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError, UsageError

KINDS = ("mlp", "lenet", "linear")
ACTIVATIONS = ("relu", "tanh")
LOSSES = ("cross-entropy", "mse-on-readout")
CONV_KERNEL = 5


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor.

    ``widths`` lists the output width of every parametrised layer, so its
    last entry is the class count. For ``lenet`` the first two entries are
    the channel counts of the two 5x5 convolutions (each followed by the
    activation and 2x2 average pooling) and the rest are dense widths.
    """

    kind: str
    widths: tuple
    activation: str = "relu"
    input_dim: int = 784
    n_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ConfigError(f"widths must be nonempty and positive, got {self.widths}")
        if self.input_dim <= 0 or self.n_classes <= 0:
            raise ConfigError("input_dim and n_classes must be positive")
        if self.widths[-1] != self.n_classes:
            raise ConfigError(
                f"final width {self.widths[-1]} does not match class count {self.n_classes}")
        if self.kind == "linear" and len(self.widths) != 1:
            raise ConfigError("a linear architecture has exactly one layer")
        if self.kind == "lenet":
            if len(self.widths) < 3:
                raise ConfigError("lenet widths need two conv channel counts and an output width")
            _lenet_geometry(self.input_dim)


def _lenet_geometry(input_dim):
    side = math.isqrt(input_dim)
    if side * side != input_dim:
        raise ConfigError(f"lenet needs a square single-channel image, got d0={input_dim}")
    s1 = side - CONV_KERNEL + 1
    if s1 < 2 or s1 % 2:
        raise ConfigError(f"image side {side} incompatible with lenet geometry")
    s2 = s1 // 2 - CONV_KERNEL + 1
    if s2 < 2 or s2 % 2:
        raise ConfigError(f"image side {side} incompatible with lenet geometry")
    return side, s1, s2


@dataclass(frozen=True)
class ReadoutRule:
    """How a c-logit network is reduced to one scalar per example."""

    mode: str = "true-class-logit"
    k: int | None = None

    def __post_init__(self):
        if self.mode not in ("true-class-logit", "fixed-class-logit", "logit-sum"):
            raise ConfigError(f"unknown readout mode {self.mode!r}")
        if self.mode == "fixed-class-logit":
            if self.k is None or self.k < 0:
                raise ConfigError("fixed-class-logit needs a class index k >= 0")
        elif self.k is not None:
            raise ConfigError(f"readout mode {self.mode} takes no class index")

    def __str__(self):
        if self.mode == "fixed-class-logit":
            return f"fixed-class-logit({self.k})"
        return self.mode

    @classmethod
    def parse(cls, text):
        text = text.strip()
        m = re.fullmatch(r"fixed-class-logit\((\d+)\)", text)
        if m:
            return cls("fixed-class-logit", int(m.group(1)))
        return cls(text)


TRUE_CLASS = ReadoutRule()


@dataclass(frozen=True, eq=False)
class ModelState:
    arch: ArchSpec
    params: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != n_params(self.arch):
            raise ShapeError(
                f"expected {n_params(self.arch)} parameters, got shape {params.shape}")
        if not np.all(np.isfinite(params)):
            raise NumericError("model parameters contain non-finite values")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    @property
    def n_params(self):
        return self.params.size

    def with_params(self, params):
        return ModelState(self.arch, params, self.seed)

    def logits(self, X):
        return _network(self.arch).forward(self.params, _as_batch(self.arch, X))[0]


# ---------------------------------------------------------------- layers


class _Dense:
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.n_params = n_in * n_out + n_out
        self.fan_in = n_in

    def init(self, rng):
        bound = 1.0 / math.sqrt(self.fan_in)
        w = rng.uniform(-bound, bound, size=self.n_in * self.n_out)
        return np.concatenate([w, np.zeros(self.n_out)])

    def _split(self, theta):
        nw = self.n_in * self.n_out
        return theta[:nw].reshape(self.n_in, self.n_out), theta[nw:]

    def forward(self, theta, x):
        W, b = self._split(theta)
        return x @ W + b, x

    def backward(self, theta, x, dy, per_sample, need_dx):
        W, _ = self._split(theta)
        dx = dy @ W.T if need_dx else None
        if per_sample:
            gW = (x[:, :, None] * dy[:, None, :]).reshape(len(x), -1)
            return dx, np.concatenate([gW, dy], axis=1)
        return dx, np.concatenate([(x.T @ dy).ravel(), dy.sum(axis=0)])

    def tangent(self, theta, dtheta, x, dx):
        W, b = self._split(theta)
        dW, db = self._split(dtheta)
        y = x @ W + b
        dy = x @ dW + db
        if dx is not None:
            dy = dy + dx @ W
        return y, dy, x


class _Conv:
    """Valid 5x5 convolution with stride 1, computed through im2col."""

    def __init__(self, c_in, c_out, side):
        self.c_in, self.c_out, self.side = c_in, c_out, side
        self.out_side = side - CONV_KERNEL + 1
        self.fan_in = c_in * CONV_KERNEL * CONV_KERNEL
        self.n_params = self.fan_in * c_out + c_out

    def init(self, rng):
        bound = 1.0 / math.sqrt(self.fan_in)
        w = rng.uniform(-bound, bound, size=self.fan_in * self.c_out)
        return np.concatenate([w, np.zeros(self.c_out)])

    def _split(self, theta):
        nw = self.fan_in * self.c_out
        return theta[:nw].reshape(self.fan_in, self.c_out), theta[nw:]

    def _patches(self, x):
        return _im2col(x)

    def _to_image(self, y):
        o = self.out_side
        return y.reshape(len(y), o, o, self.c_out).transpose(0, 3, 1, 2)

    def forward(self, theta, x):
        W, b = self._split(theta)
        patches = self._patches(x)
        return self._to_image(patches @ W + b), patches

    def backward(self, theta, patches, dy, per_sample, need_dx):
        W, _ = self._split(theta)
        B, o, k = len(dy), self.out_side, CONV_KERNEL
        dyf = dy.transpose(0, 2, 3, 1).reshape(B, o * o, self.c_out)
        if per_sample:
            gW = np.matmul(patches.transpose(0, 2, 1), dyf).reshape(B, -1)
            grad = np.concatenate([gW, dyf.sum(axis=1)], axis=1)
        else:
            gW = patches.reshape(-1, self.fan_in).T @ dyf.reshape(-1, self.c_out)
            grad = np.concatenate([gW.ravel(), dyf.sum(axis=(0, 1))])
        dx = None
        if need_dx:
            # full correlation of dy with the spatially flipped kernel
            pad = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            Wf = W.reshape(self.c_in, k, k, self.c_out)[:, ::-1, ::-1, :]
            Wf = Wf.transpose(3, 1, 2, 0).reshape(self.c_out * k * k, self.c_in)
            dx = (_im2col(pad) @ Wf).reshape(B, self.side, self.side, self.c_in)
            dx = dx.transpose(0, 3, 1, 2)
        return dx, grad

    def tangent(self, theta, dtheta, x, dx):
        W, b = self._split(theta)
        dW, db = self._split(dtheta)
        patches = self._patches(x)
        y = patches @ W + b
        dy = patches @ dW + db
        if dx is not None:
            dy = dy + self._patches(dx) @ W
        return self._to_image(y), self._to_image(dy), patches


def _im2col(x):
    # (B, C, H, W) -> (B, Ho*Wo, C*k*k), patch entries ordered (C, k, k)
    k = CONV_KERNEL
    win = sliding_window_view(x, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
    B, ho, wo = win.shape[:3]
    return win.reshape(B, ho * wo, -1)


class _Activation:
    n_params = 0

    def __init__(self, name):
        self.name = name

    def forward(self, theta, z):
        if self.name == "relu":
            return np.maximum(z, 0.0), z
        a = np.tanh(z)
        return a, a

    def _deriv(self, cache):
        if self.name == "relu":
            # derivative at 0 is taken to be 0
            return (cache > 0).astype(np.float64)
        return 1.0 - cache * cache

    def backward(self, theta, cache, dy, per_sample, need_dx):
        return dy * self._deriv(cache), None

    def tangent(self, theta, dtheta, z, dz):
        a, cache = self.forward(theta, z)
        return a, (None if dz is None else dz * self._deriv(cache)), cache


class _AvgPool2:
    n_params = 0

    def forward(self, theta, x):
        B, C, H, W = x.shape
        return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5)), None

    def backward(self, theta, cache, dy, per_sample, need_dx):
        return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25, None

    def tangent(self, theta, dtheta, x, dx):
        return self.forward(theta, x)[0], (None if dx is None else self.forward(theta, dx)[0]), None


class _Reshape:
    n_params = 0

    def __init__(self, shape):
        self.shape = shape

    def forward(self, theta, x):
        return x.reshape((len(x),) + self.shape), x.shape[1:]

    def backward(self, theta, in_shape, dy, per_sample, need_dx):
        return dy.reshape((len(dy),) + in_shape), None

    def tangent(self, theta, dtheta, x, dx):
        y = x.reshape((len(x),) + self.shape)
        return y, (None if dx is None else dx.reshape((len(dx),) + self.shape)), x.shape[1:]


class _Network:
    def __init__(self, arch):
        self.arch = arch
        self.layers = _build_layers(arch)
        self.offsets = np.cumsum([0] + [layer.n_params for layer in self.layers])
        self.n_params = int(self.offsets[-1])

    def _slice(self, params, i):
        return params[self.offsets[i]:self.offsets[i + 1]]

    def forward(self, params, X, keep=False):
        caches = []
        h = X
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(self._slice(params, i), h)
            _check_finite(h, i, "forward")
            if keep:
                caches.append(cache)
        return h, caches

    def backward(self, params, caches, dy, per_sample=False):
        B = len(dy)
        grads = [None] * len(self.layers)
        first = next(i for i, layer in enumerate(self.layers) if layer.n_params)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            dy, g = layer.backward(self._slice(params, i), caches[i], dy, per_sample,
                                   need_dx=i > first)
            if g is not None:
                _check_finite(g, i, "backward")
                grads[i] = g
            if i <= first:
                break
        parts = [g for g in grads if g is not None]
        if per_sample:
            return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0].reshape(B, -1)
        return np.concatenate(parts)

    def tangent(self, params, dparams, X, keep=False):
        h, dh, caches = X, None, []
        for i, layer in enumerate(self.layers):
            h, dh, cache = layer.tangent(self._slice(params, i), self._slice(dparams, i), h, dh)
            _check_finite(h, i, "forward")
            if keep:
                caches.append(cache)
        return h, dh, caches


def _build_layers(arch):
    act = arch.activation
    if arch.kind == "linear":
        return [_Dense(arch.input_dim, arch.n_classes)]
    if arch.kind == "mlp":
        layers, d = [], arch.input_dim
        for w in arch.widths[:-1]:
            layers += [_Dense(d, w), _Activation(act)]
            d = w
        return layers + [_Dense(d, arch.widths[-1])]
    side, s1, s2 = _lenet_geometry(arch.input_dim)
    c1, c2 = arch.widths[0], arch.widths[1]
    layers = [
        _Reshape((1, side, side)),
        _Conv(1, c1, side), _Activation(act), _AvgPool2(),
        _Conv(c1, c2, s1 // 2), _Activation(act), _AvgPool2(),
    ]
    d = c2 * (s2 // 2) ** 2
    layers.append(_Reshape((d,)))
    for w in arch.widths[2:-1]:
        layers += [_Dense(d, w), _Activation(act)]
        d = w
    return layers + [_Dense(d, arch.widths[-1])]


@lru_cache(maxsize=64)
def _network(arch):
    return _Network(arch)


def _check_finite(a, layer, stage):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {stage} pass at layer {layer}", layer=layer)


def _as_batch(arch, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ShapeError(f"expected inputs of dimension {arch.input_dim}, got shape {X.shape}")
    return X


def _as_labels(y, batch):
    if y is None:
        return None
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {y.shape}")
    return y.astype(np.int64)


# ---------------------------------------------------------------- public API


def n_params(arch):
    return _network(arch).n_params


def init_model(arch, seed):
    """Draw weights uniformly in +-1/sqrt(fan_in) with zero biases."""
    rng = np.random.default_rng(seed)
    net = _network(arch)
    parts = [layer.init(rng) for layer in net.layers if layer.n_params]
    return ModelState(arch, np.concatenate(parts), seed)


def forward(model, x):
    """Logits for one input vector (shape ``(c,)``) or a batch (``(B, c)``)."""
    single = np.ndim(x) == 1
    out = model.logits(x)
    return out[0] if single else out


def readout_seed(rule, y, batch, n_classes):
    """Cotangent on the logits that selects the scalar readout."""
    if n_classes == 1:
        return np.ones((batch, 1))
    seed = np.zeros((batch, n_classes))
    if rule.mode == "logit-sum":
        seed[:] = 1.0
    elif rule.mode == "fixed-class-logit":
        if rule.k >= n_classes:
            raise UsageError(f"readout class {rule.k} outside [0, {n_classes})")
        seed[:, rule.k] = 1.0
    else:
        if y is None:
            raise UsageError("true-class-logit readout needs labels")
        if np.any((y < 0) | (y >= n_classes)):
            raise UsageError("label outside the class range")
        seed[np.arange(batch), y] = 1.0
    return seed


def scalar_outputs(model, X, y=None, rule=TRUE_CLASS):
    X = _as_batch(model.arch, X)
    y = _as_labels(y, len(X))
    logits = model.logits(X)
    return (logits * readout_seed(rule, y, len(X), model.arch.n_classes)).sum(axis=1)


def scalar_output(model, x, y=None, rule=TRUE_CLASS):
    return float(scalar_outputs(model, x, None if y is None else [y], rule)[0])


def readout_grads(model, X, y=None, rule=TRUE_CLASS):
    """Per-sample gradients of the scalar readout, shape ``(B, p)``."""
    X = _as_batch(model.arch, X)
    y = _as_labels(y, len(X))
    net = _network(model.arch)
    _, caches = net.forward(model.params, X, keep=True)
    seed = readout_seed(rule, y, len(X), model.arch.n_classes)
    return net.backward(model.params, caches, seed, per_sample=True)


def grad_params(model, x, y=None, rule=TRUE_CLASS):
    return readout_grads(model, x, None if y is None else [y], rule)[0]


def vjp(model, X, cotangent):
    """Sum over the batch of ``J_i^T cotangent_i``."""
    X = _as_batch(model.arch, X)
    net = _network(model.arch)
    _, caches = net.forward(model.params, X, keep=True)
    return net.backward(model.params, caches, np.asarray(cotangent, dtype=np.float64))


def jvp(model, X, tangent):
    """Logits and their directional derivative along ``tangent``."""
    X = _as_batch(model.arch, X)
    tangent = np.asarray(tangent, dtype=np.float64)
    if tangent.shape != (model.n_params,):
        raise ShapeError(f"tangent must have shape ({model.n_params},)")
    y, dy, _ = _network(model.arch).tangent(model.params, tangent, X)
    return y, dy


def loss_from_logits(logits, y, loss="cross-entropy", rule=TRUE_CLASS, targets=None):
    """Mean loss and its gradient with respect to the logits."""
    B, c = logits.shape
    if B == 0:
        raise UsageError("empty batch")
    if loss == "cross-entropy":
        if y is None:
            raise UsageError("cross-entropy needs labels")
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        per = lse - shifted[np.arange(B), y]
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(B), y] -= 1.0
        return float(per.mean()), probs / B
    if loss == "mse-on-readout":
        seed = readout_seed(rule, y, B, c)
        r = (logits * seed).sum(axis=1)
        t = np.zeros(B) if targets is None else np.asarray(targets, dtype=np.float64)
        resid = r - t
        return float(0.5 * np.mean(resid * resid)), seed * (resid / B)[:, None]
    raise ConfigError(f"unknown loss {loss!r}")


def loss_and_grad(model, X, y=None, loss="cross-entropy", rule=TRUE_CLASS, targets=None):
    """Mean batch loss and its parameter gradient.

    ``cross-entropy`` acts on the full logit vector. ``mse-on-readout`` is
    ``0.5 * (readout - target)**2`` on the scalar readout; targets default
    to zero.
    """
    X = _as_batch(model.arch, X)
    if len(X) == 0:
        raise UsageError("empty batch")
    return raw_loss_and_grad(model.arch, model.params, X, _as_labels(y, len(X)),
                             loss, rule, targets)


def raw_loss_and_grad(arch, params, X, y, loss="cross-entropy", rule=TRUE_CLASS, targets=None):
    # unchecked fast path for training loops
    net = _network(arch)
    logits, caches = net.forward(params, X, keep=True)
    value, dlogits = loss_from_logits(logits, y, loss, rule, targets)
    return value, net.backward(params, caches, dlogits)


def raw_linearized_loss_and_grad(arch, anchor_params, delta, X, y, loss="cross-entropy",
                                 rule=TRUE_CLASS, targets=None):
    """Loss of the anchored first-order expansion and its gradient in ``delta``.

    One tangent pass at the anchor gives ``f(anchor) + J delta``; the
    backward pass over the same caches gives ``J^T dL/dlogits``.
    """
    net = _network(arch)
    y0, dy, caches = net.tangent(anchor_params, delta, X, keep=True)
    value, dlogits = loss_from_logits(y0 + dy, y, loss, rule, targets)
    return value, net.backward(anchor_params, caches, dlogits)
