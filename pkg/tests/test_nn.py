import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entkcone.errors import ConfigError, NumericError, ShapeError, UsageError
from entkcone.nn import (
    ArchSpec,
    ModelState,
    ReadoutRule,
    forward,
    grad_params,
    init_model,
    jvp,
    loss_and_grad,
    n_params,
    readout_grads,
    scalar_output,
    vjp,
)


def fd_grad(fn, p, h=1e-5):
    out = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        out[i] = (fn(p + e) - fn(p - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def hand_mlp_forward(params, widths, d0, act, x):
    """Layer-by-layer loops, independent of the engine's vectorised code."""
    off, h, d = 0, list(x), d0
    for li, w in enumerate(widths):
        W = [[params[off + i * w + j] for j in range(w)] for i in range(d)]
        off += d * w
        b = params[off:off + w]
        off += w
        z = [sum(h[i] * W[i][j] for i in range(d)) + b[j] for j in range(w)]
        if li < len(widths) - 1:
            z = [max(v, 0.0) if act == "relu" else np.tanh(v) for v in z]
        h, d = z, w
    return np.array(h)


def linear_model(W, b):
    W = np.asarray(W, dtype=float)
    arch = ArchSpec("linear", (W.shape[1],), "relu", W.shape[0], W.shape[1])
    return ModelState(arch, np.concatenate([W.ravel(), b]))


def test_init_deterministic():
    arch = ArchSpec("linear", (1,), "relu", 2, 1)
    assert np.array_equal(init_model(arch, 7).params, init_model(arch, 7).params)


def test_parameter_count():
    arch = ArchSpec("mlp", (3, 1), "relu", 2, 1)
    assert n_params(arch) == 2 * 3 + 3 + 3 * 1 + 1 == 13
    assert init_model(arch, 0).n_params == 13


def test_seeds_differ():
    arch = ArchSpec("mlp", (3, 1), "relu", 2, 1)
    assert np.any(init_model(arch, 1).params != init_model(arch, 2).params)


def test_init_scaling_and_zero_biases():
    m = init_model(ArchSpec("mlp", (50, 10), "relu", 100, 10), 0)
    W1 = m.params[:100 * 50]
    assert np.abs(W1).max() <= 0.1
    assert np.all(m.params[100 * 50:100 * 50 + 50] == 0)


@pytest.mark.parametrize("kw", [
    dict(kind="mlp", widths=()),
    dict(kind="mlp", widths=(0, 3)),
    dict(kind="mlp", widths=(4, 2)),          # final width != c
    dict(kind="linear", widths=(4, 3)),
    dict(kind="lenet", widths=(3,)),
    dict(kind="cnn", widths=(3,)),
])
def test_invalid_arch(kw):
    with pytest.raises(ConfigError):
        ArchSpec(activation="relu", input_dim=4, n_classes=3, **kw)


def test_lenet_needs_square_input():
    with pytest.raises(ConfigError):
        ArchSpec("lenet", (2, 2, 3), "relu", 700, 3)


def test_forward_linear_dot_product():
    m = linear_model([[1.0], [2.0]], [0.0])
    assert forward(m, [3.0, 4.0]) == pytest.approx([11.0])


def test_forward_relu_zero_input():
    m = init_model(ArchSpec("mlp", (16, 16, 4), "relu", 5, 4), 3)
    assert np.all(forward(m, np.zeros(5)) == 0.0)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_forward_matches_hand_rolled(act, rng):
    m = init_model(ArchSpec("mlp", (6, 5, 3), act, 4, 3), 11)
    for _ in range(5):
        x = rng.normal(size=4)
        ref = hand_mlp_forward(m.params, (6, 5, 3), 4, act, x)
        np.testing.assert_allclose(forward(m, x), ref, rtol=0, atol=1e-12)


def _conv_naive(img, K, bias):
    # img (C, H, W), K (C, k, k, O)
    C, H, W = img.shape
    k, O = K.shape[1], K.shape[3]
    out = np.zeros((O, H - k + 1, W - k + 1))
    for o in range(O):
        for i in range(H - k + 1):
            for j in range(W - k + 1):
                out[o, i, j] = np.sum(img[:, i:i + k, j:j + k] * K[:, :, :, o]) + bias[o]
    return out


def test_lenet_forward_matches_naive_convolution(rng):
    arch = ArchSpec("lenet", (2, 3, 5, 4), "tanh", 28 * 28, 4)
    m = init_model(arch, 5)
    x = rng.uniform(size=784)
    p, off = m.params, 0

    def take(n):
        nonlocal off
        out = p[off:off + n]
        off += n
        return out

    h = x.reshape(1, 28, 28)
    for c_in, c_out in ((1, 2), (2, 3)):
        K = take(c_in * 25 * c_out).reshape(c_in, 5, 5, c_out)
        h = np.tanh(_conv_naive(h, K, take(c_out)))
        C, H, W = h.shape
        h = h.reshape(C, H // 2, 2, W // 2, 2).mean(axis=(2, 4))
    h = h.ravel()
    W1 = take(h.size * 5).reshape(h.size, 5)
    h = np.tanh(h @ W1 + take(5))
    W2 = take(5 * 4).reshape(5, 4)
    ref = h @ W2 + take(4)
    np.testing.assert_allclose(forward(m, x), ref, rtol=0, atol=1e-12)


def test_forward_shape_mismatch(tiny_mlp):
    with pytest.raises(ShapeError):
        forward(tiny_mlp, np.zeros(5))


def test_scalar_output_single_logit():
    m = init_model(ArchSpec("mlp", (4, 1), "tanh", 3, 1), 2)
    x = np.array([0.3, -1.0, 2.0])
    logit = forward(m, x)[0]
    for rule in (ReadoutRule(), ReadoutRule("logit-sum"), ReadoutRule("fixed-class-logit", 0)):
        assert scalar_output(m, x, 0, rule) == logit


def test_scalar_output_rules():
    m = linear_model(np.zeros((1, 3)), [1.0, 2.0, 3.0])   # logits (1, 2, 3)
    assert scalar_output(m, [0.5], rule=ReadoutRule("logit-sum")) == 6.0
    # labels are 0-based: class index 1 is the second logit
    assert scalar_output(m, [0.5], 1) == 2.0
    assert scalar_output(m, [0.5], rule=ReadoutRule.parse("fixed-class-logit(2)")) == 3.0


def test_true_class_needs_label():
    m = linear_model(np.zeros((1, 3)), [1.0, 2.0, 3.0])
    with pytest.raises(UsageError):
        scalar_output(m, [0.5])


def test_fixed_class_out_of_range():
    m = linear_model(np.zeros((1, 3)), [1.0, 2.0, 3.0])
    with pytest.raises(UsageError):
        scalar_output(m, [0.5], rule=ReadoutRule("fixed-class-logit", 3))


def test_readout_rule_parse_roundtrip():
    for text in ("true-class-logit", "logit-sum", "fixed-class-logit(4)"):
        assert str(ReadoutRule.parse(text)) == text
    with pytest.raises(ConfigError):
        ReadoutRule.parse("max-logit")


def test_grad_linear_is_input():
    m = linear_model([[0.7], [-0.2]], [0.1])
    x = np.array([3.0, 4.0])
    # weight part is x, bias part is 1
    np.testing.assert_array_equal(grad_params(m, x, 0), [3.0, 4.0, 1.0])


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_grad_matches_finite_differences(act, rng):
    m = init_model(ArchSpec("mlp", (8, 3), act, 4, 3), 0)
    for _ in range(5):
        x, y = rng.normal(size=4), int(rng.integers(3))
        fd = fd_grad(lambda p: scalar_output(m.with_params(p), x, y), m.params)
        assert rel_err(grad_params(m, x, y), fd) < 1e-6


def test_output_scaling_scales_earlier_gradients(rng):
    arch = ArchSpec("mlp", (6, 3), "tanh", 4, 3)
    m = init_model(arch, 1)
    n_hidden = 4 * 6 + 6
    alpha = 2.5
    scaled = m.params.copy()
    scaled[n_hidden:] *= alpha
    x = rng.normal(size=4)
    g0 = grad_params(m, x, 1)
    g1 = grad_params(m.with_params(scaled), x, 1)
    np.testing.assert_allclose(g1[:n_hidden], alpha * g0[:n_hidden], rtol=1e-12, atol=1e-15)


def test_non_finite_reports_layer():
    m = linear_model([[1e200], [1e200]], [0.0])
    with pytest.raises(NumericError) as info, np.errstate(over="ignore"):
        forward(m, [1e200, 1e200])
    assert info.value.layer == 0


def test_pure_and_bitwise_repeatable(tiny_mlp, rng):
    x = rng.normal(size=4)
    before = tiny_mlp.params.copy()
    a = grad_params(tiny_mlp, x, 2)
    b = grad_params(tiny_mlp, x, 2)
    assert a.tobytes() == b.tobytes()
    assert forward(tiny_mlp, x).tobytes() == forward(tiny_mlp, x).tobytes()
    assert np.array_equal(before, tiny_mlp.params)
    with pytest.raises(ValueError):
        tiny_mlp.params[0] = 1.0


def test_cross_entropy_perfect_prediction():
    m = linear_model(np.zeros((1, 3)), [0.0, 200.0, 0.0])
    loss, grad = loss_and_grad(m, [[1.0]], [1])
    assert loss < 1e-80
    assert np.abs(grad).max() < 1e-80


def test_mse_at_target_is_flat(tiny_mlp, rng):
    X = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    from entkcone.nn import scalar_outputs
    t = scalar_outputs(tiny_mlp, X, y)
    loss, grad = loss_and_grad(tiny_mlp, X, y, "mse-on-readout", targets=t)
    assert loss == 0.0
    assert np.all(grad == 0.0)


@pytest.mark.parametrize("loss", ["cross-entropy", "mse-on-readout"])
def test_loss_grad_matches_finite_differences(loss, tiny_mlp, rng):
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    t = rng.normal(size=6)
    _, g = loss_and_grad(tiny_mlp, X, y, loss, targets=t)
    fd = fd_grad(lambda p: loss_and_grad(tiny_mlp.with_params(p), X, y, loss, targets=t)[0],
                 tiny_mlp.params)
    assert rel_err(g, fd) < 1e-6


def test_empty_batch(tiny_mlp):
    with pytest.raises(UsageError):
        loss_and_grad(tiny_mlp, np.zeros((0, 4)), np.zeros(0, dtype=int))


def test_per_sample_rows_match_single_gradients(tiny_mlp, rng):
    X = rng.normal(size=(4, 4))
    y = [0, 1, 2, 1]
    G = readout_grads(tiny_mlp, X, y)
    for i in range(4):
        np.testing.assert_allclose(G[i], grad_params(tiny_mlp, X[i], y[i]), rtol=0, atol=1e-14)


def test_jvp_vjp_adjoint(tiny_mlp, rng):
    X = rng.normal(size=(3, 4))
    v = rng.normal(size=tiny_mlp.n_params)
    u = rng.normal(size=(3, 3))
    _, Jv = jvp(tiny_mlp, X, v)
    assert np.sum(u * Jv) == pytest.approx(v @ vjp(tiny_mlp, X, u), rel=1e-12)


def test_jvp_matches_finite_differences(rng):
    m = init_model(ArchSpec("lenet", (2, 3, 6, 4), "tanh", 784, 4), 0)
    X = rng.uniform(size=(2, 784))
    v = rng.normal(size=m.n_params)
    _, Jv = jvp(m, X, v)
    h = 1e-6
    fd = (m.with_params(m.params + h * v).logits(X) - m.with_params(m.params - h * v).logits(X)) / (2 * h)
    assert rel_err(Jv, fd) < 1e-6


@settings(max_examples=20, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10_000), hidden=st.lists(st.integers(1, 6), min_size=1, max_size=2),
       act=st.sampled_from(["relu", "tanh"]))
def test_gradient_oracle_property(seed, hidden, act):
    arch = ArchSpec("mlp", tuple(hidden) + (3,), act, 3, 3)
    rng = np.random.default_rng(seed)
    # nonzero biases keep relu pre-activations off the kink at exactly 0
    m = init_model(arch, seed)
    m = m.with_params(m.params + 0.1 * rng.normal(size=m.n_params))
    x, y = rng.normal(size=3), int(rng.integers(3))
    g = grad_params(m, x, y)
    assert g.size == m.n_params == n_params(arch)
    fd = fd_grad(lambda p: scalar_output(m.with_params(p), x, y), m.params)
    scale = max(np.linalg.norm(fd), 1e-8)
    assert np.linalg.norm(g - fd) / scale < 1e-6
