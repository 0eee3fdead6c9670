"""Minimal float64 neural-network layers with hand-written backward passes.

Arrays are channels-last: dense layers take ``(N, features)``, sequence
layers take ``(N, length, channels)``.  Every layer exposes ``params`` and
``grads`` (parallel lists of arrays, updated in place) and optional
``buffers`` for non-trainable state such as batch-norm running statistics.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: list[np.ndarray]
    grads: list[np.ndarray]
    buffers: list[np.ndarray]

    def __init__(self):
        self.params, self.grads, self.buffers = [], [], []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _register(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            self.params.append(a)
            self.grads.append(np.zeros_like(a))


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "he"):
        super().__init__()
        scale = np.sqrt(2.0 / n_in) if init == "he" else np.sqrt(2.0 / (n_in + n_out))
        self.W = rng.normal(0.0, scale, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self._register(self.W, self.b)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self.grads[0][...] = self._x.T @ dy
        self.grads[1][...] = dy.sum(axis=0)
        return dy @ self.W.T


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return dy * self._mask


class Conv1D(Layer):
    """Stride-1 convolution with zero "same" padding (odd kernel)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.k, self.c_in = kernel, c_in
        self.W = rng.normal(0.0, np.sqrt(2.0 / (kernel * c_in)), size=(kernel * c_in, c_out))
        self.b = np.zeros(c_out)
        self._register(self.W, self.b)

    def forward(self, x, train=False):
        n, length, c = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        h = self.k // 2
        xp = np.pad(x, ((0, 0), (h, h), (0, 0)))
        # (n, length, c, k) -> (n, length, k, c) so rows match W's (k, c_in) layout
        cols = sliding_window_view(xp, self.k, axis=1).transpose(0, 1, 3, 2)
        self._cols = cols.reshape(n * length, self.k * c)
        self._shape = x.shape
        return (self._cols @ self.W + self.b).reshape(n, length, -1)

    def backward(self, dy):
        n, length, c = self._shape
        dy2 = dy.reshape(n * length, -1)
        self.grads[0][...] = self._cols.T @ dy2
        self.grads[1][...] = dy2.sum(axis=0)
        h = self.k // 2
        dxp = np.zeros((n, length + 2 * h, c))
        for j in range(self.k):
            dxp[:, j:j + length] += (dy2 @ self.W[j * c:(j + 1) * c].T).reshape(n, length, c)
        return dxp[:, h:h + length]


class BatchNorm(Layer):
    """Per-channel normalization over every axis except the last."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-3):
        super().__init__()
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self._register(self.gamma, self.beta)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.buffers = [self.running_mean, self.running_var]
        self.momentum, self.eps = momentum, eps

    def forward(self, x, train=False):
        shape = x.shape
        x2 = x.reshape(-1, shape[-1])
        if train:
            mean = x2.mean(axis=0)
            xc = x2 - mean
            var = (xc * xc).mean(axis=0)
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1 - m) * mean
            self.running_var *= m
            self.running_var += (1 - m) * var
        else:
            xc = x2 - self.running_mean
            var = self.running_var
        self._train = train
        self._inv = 1.0 / np.sqrt(var + self.eps)
        xc *= self._inv
        self._xhat = xc
        return (xc * self.gamma + self.beta).reshape(shape)

    def backward(self, dy):
        shape = dy.shape
        dy2 = dy.reshape(-1, shape[-1])
        xhat = self._xhat
        m = dy2.shape[0]
        dgamma = (dy2 * xhat).sum(axis=0)
        dbeta = dy2.sum(axis=0)
        self.grads[0][...] = dgamma
        self.grads[1][...] = dbeta
        if not self._train:
            # fixed statistics: the normalization is affine in x
            return (dy2 * (self.gamma * self._inv)).reshape(shape)
        dx = dy2 - dbeta / m
        dx -= xhat * (dgamma / m)
        dx *= self.gamma * self._inv
        return dx.reshape(shape)


class GlobalAveragePool(Layer):
    def forward(self, x, train=False):
        self._length = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dy):
        return np.repeat(dy[:, None, :] / self._length, self._length, axis=1)


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    @property
    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted mean binary cross-entropy and its gradient w.r.t. the logits.

    Entries with zero weight are ignored; the mean divides by the weight sum.
    """
    total = w.sum()
    if total <= 0:
        return 0.0, np.zeros_like(z)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float((w * per).sum() / total)
    return loss, w * (sigmoid(z) - y) / total


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
