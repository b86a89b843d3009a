"""Invariant checks on a tiny model, run by ``entkcone validate``."""

from __future__ import annotations

import numpy as np

from .data import probe_sample, synth_blobs
from .lintrain import linearize, train_linearized
from .nn import ArchSpec, grad_params, init_model, scalar_output
from .ntk import GramRecorder, entk_gram, functional_dynamics_residual, kernel_distance
from .train import TrainConfig, train


def _fd_relative_error(model, x, y, h=1e-5):
    g = grad_params(model, x, y)
    fd = np.empty_like(g)
    p = model.params
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        fd[i] = (scalar_output(model.with_params(p + e), x, y)
                 - scalar_output(model.with_params(p - e), x, y)) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))


def run_checks(seed=0):
    """Yield ``(name, passed, detail)`` for each invariant."""
    data = synth_blobs(seed, 8, 4, 3, 1.0)
    model = init_model(ArchSpec("mlp", (8, 3), "tanh", 4, 3), seed)
    rng = np.random.default_rng(seed)

    worst = max(_fd_relative_error(model, rng.normal(size=4), int(rng.integers(3)))
                for _ in range(5))
    yield "gradient vs finite differences", worst < 1e-6, f"max rel err {worst:.2e}"

    probe = probe_sample(data, 8, seed)
    grams = [entk_gram(model, probe, chunk=c).matrix for c in (1, 2, 8)]
    diff = max(float(np.abs(g - grams[0]).max()) for g in grams)
    yield "gram chunk invariance", diff <= 1e-12, f"max diff {diff:.2e}"

    H = grams[0]
    floor = float(np.linalg.eigvalsh(H).min())
    yield "gram PSD", floor >= -1e-8 * np.trace(H) / len(H), f"min eigenvalue {floor:.2e}"

    s_self = kernel_distance(H, H)
    s_scaled = max(kernel_distance(H, a * H) for a in (0.5, 3.0, 100.0))
    ok = s_self <= 1e-12 and s_scaled <= 1e-12 and kernel_distance(np.diag([1.0, 0.0]),
                                                                   np.diag([0.0, 1.0])) == 1.0
    yield "kernel distance algebra", ok, f"S(H,H)={s_self:.1e} S(H,aH)<={s_scaled:.1e}"

    r1 = functional_dynamics_residual(model, probe, 1e-3)
    r2 = functional_dynamics_residual(model, probe, 5e-4)
    ratio = r1 / r2 if r2 > 0 else float("inf")
    yield "first-order output dynamics", 3.0 <= ratio <= 5.0, f"residual ratio {ratio:.3f}"

    cfg = TrainConfig(lr=0.05, momentum=0.9, batch_size=8, iterations=100, shuffle_seed=seed,
                      checkpoint_every=20)
    rec = GramRecorder(probe)
    lin_log = train_linearized(linearize(model), data, cfg, hooks=[rec])
    drift = max(kernel_distance(r.grams[rec.key], lin_log.records[0].grams[rec.key])
                for r in lin_log)
    yield "linearized kernel is constant", drift < 1e-8, f"max S to start {drift:.1e}"

    lin_arch = init_model(ArchSpec("linear", (3,), "relu", 4, 3), seed)
    std = train(lin_arch, data, cfg)
    lin = train_linearized(linearize(lin_arch), data, cfg)
    gap = max(float(np.abs(a.model.params - b.model.params).max())
              for a, b in zip(std, lin))
    yield "linear model: standard == linearized", gap <= 1e-10, f"max param gap {gap:.1e}"
