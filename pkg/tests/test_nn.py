import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adabort import nn


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30)


def check_layer(layer, x, train=True):
    rng = np.random.default_rng(0)
    y0 = layer.forward(x, train)
    r = rng.normal(size=y0.shape)
    saved = [b.copy() for b in layer.buffers]

    def loss():
        out = float((layer.forward(x, train) * r).sum())
        for b, s in zip(layer.buffers, saved):
            b[...] = s
        return out

    layer.forward(x, train)
    dx = layer.backward(r)
    grads = [g.copy() for g in layer.grads]
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-6
    for p, g in zip(layer.params, grads):
        assert rel_err(g, numeric_grad(loss, p)) < 1e-6


def test_dense():
    check_layer(nn.Dense(5, 3, np.random.default_rng(1)), np.random.default_rng(2).normal(size=(4, 5)))


def test_relu():
    x = np.random.default_rng(3).normal(size=(6, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    check_layer(nn.ReLU(), x)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv1d(k):
    check_layer(nn.Conv1D(3, 4, k, np.random.default_rng(1)), np.random.default_rng(2).normal(size=(2, 7, 3)))


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(5)
    conv = nn.Conv1D(2, 3, 3, rng)
    x = rng.normal(size=(1, 6, 2))
    y = conv.forward(x)
    W = conv.W.reshape(3, 2, 3)  # (tap, c_in, c_out)
    xp = np.pad(x[0], ((1, 1), (0, 0)))
    want = np.array([sum(xp[i + j] @ W[j] for j in range(3)) + conv.b for i in range(6)])
    assert np.allclose(y[0], want)


def test_batchnorm_train_and_inference():
    bn = nn.BatchNorm(3)
    x = np.random.default_rng(1).normal(2.0, 3.0, size=(5, 4, 3))
    check_layer(bn, x, train=True)
    bn.gamma[...] = [1.5, 0.5, 2.0]
    check_layer(bn, x, train=False)
    y = nn.BatchNorm(3).forward(x, train=True)
    flat = y.reshape(-1, 3)
    assert np.allclose(flat.mean(axis=0), 0, atol=1e-12)
    # biased variance with eps = 1e-3
    var = x.reshape(-1, 3).var(axis=0)
    assert np.allclose(flat.var(axis=0), var / (var + 1e-3))


def test_batchnorm_running_stats():
    bn = nn.BatchNorm(2, momentum=0.9)
    x = np.array([[[1.0, 2.0]], [[3.0, 6.0]]])
    bn.forward(x, train=True)
    assert np.allclose(bn.running_mean, 0.1 * np.array([2.0, 4.0]))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * np.array([1.0, 4.0]))


def test_global_average_pool():
    check_layer(nn.GlobalAveragePool(), np.random.default_rng(1).normal(size=(3, 5, 2)))


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_sigmoid_stable(zs):
    z = np.array(zs)
    s = nn.sigmoid(z)
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))
    assert np.allclose(s, 0.5 * (1 + np.tanh(z / 2)), atol=1e-12)


def test_bce_with_logits():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(8, 2))
    y = rng.integers(0, 2, size=(8, 2)).astype(float)
    w = rng.uniform(0, 2, size=(8, 2))
    loss, dz = nn.bce_with_logits(z, y, w)
    p = 1 / (1 + np.exp(-z))
    want = -(w * (y * np.log(p) + (1 - y) * np.log(1 - p))).sum() / w.sum()
    assert loss == pytest.approx(want)
    assert rel_err(dz, numeric_grad(lambda: nn.bce_with_logits(z, y, w)[0], z)) < 1e-7
    assert nn.bce_with_logits(z, y, np.zeros_like(w))[0] == 0.0


def test_adam_first_step_moves_by_lr():
    p = np.array([1.0, -2.0])
    opt = nn.Adam([p], lr=0.1)
    opt.step([np.array([3.0, -0.5])])
    assert np.allclose(p, [0.9, -1.9], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_sequential_gradients(seed):
    rng = np.random.default_rng(seed)
    model = nn.Sequential([nn.Conv1D(2, 4, 3, rng), nn.ReLU(), nn.BatchNorm(4), nn.GlobalAveragePool(), nn.Dense(4, 1, rng)])
    x = rng.normal(size=(3, 5, 2))
    r = rng.normal(size=(3, 1))
    saved = [b.copy() for b in model.buffers]

    def loss():
        out = float((model.forward(x, True) * r).sum())
        for b, s in zip(model.buffers, saved):
            b[...] = s
        return out

    model.forward(x, True)
    model.backward(r)
    grads = [g.copy() for g in model.grads]
    for p, g in zip(model.params, grads):
        num = numeric_grad(loss, p)
        if np.linalg.norm(num) > 1e-8:
            assert rel_err(g, num) < 1e-4
