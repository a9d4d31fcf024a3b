"""Small neural-network engine with hand-written backpropagation.

Tensors are plain numpy arrays in NCHW layout. Every layer caches what it
needs during ``forward`` and writes parameter gradients during ``backward``;
parameters only change when an optimizer is stepped.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: list
    grads: list

    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grad(self):
        for g in self.grads:
            g[...] = 0.0


def _he(rng, fan_in, shape, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32, init_scale: float = 1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = _he(rng, n_in, (n_in, n_out), dtype) * dtype(init_scale)
        self.b = np.zeros(n_out, dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self.grads[0][...] = self._x.T @ dy
        self.grads[1][...] = dy.sum(axis=0)
        return dy @ self.W.T


class Conv2d(Layer):
    """Strided convolution via im2col; weights are (C*k*k, out)."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 4, stride: int = 2, pad: int = 1,
                 rng=None, dtype=np.float32, input_grad: bool = True):
        super().__init__()
        # the first layer of a network never needs its input gradient
        self.input_grad = input_grad
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.k, self.s, self.p = c_in, c_out, kernel, stride, pad
        fan_in = c_in * kernel * kernel
        self.W = _he(rng, fan_in, (fan_in, c_out), dtype)
        self.b = np.zeros(c_out, dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def out_size(self, h: int) -> int:
        return (h + 2 * self.p - self.k) // self.s + 1

    def forward(self, x):
        n, c, h, w = x.shape
        k, s, p = self.k, self.s, self.p
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        ho, wo = self.out_size(h), self.out_size(w)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        y = cols @ self.W + self.b
        return y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        xshape, xpshape, cols, ho, wo = self._cache
        n, c, h, w = xshape
        k, s, p = self.k, self.s, self.p
        d = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.grads[0][...] = cols.T @ d
        self.grads[1][...] = d.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = np.ascontiguousarray((d @ self.W.T).reshape(n, ho, wo, c, k, k).transpose(4, 5, 0, 3, 1, 2))
        dxp = np.zeros(xpshape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[i, j]
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class ConvTranspose2d(Layer):
    """Transposed convolution with kernel = stride = 2 (exact 2x upsampling)."""

    def __init__(self, c_in: int, c_out: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.W = _he(rng, c_in, (c_in, c_out * 4), dtype)
        self.b = np.zeros(c_out, dtype)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def forward(self, x):
        n, c, h, w = x.shape
        xf = x.transpose(0, 2, 3, 1).reshape(-1, c)
        self._cache = (xf, x.shape)
        y = (xf @ self.W).reshape(n, h, w, self.c_out, 2, 2)
        y = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, self.c_out, 2 * h, 2 * w)
        return y + self.b[None, :, None, None]

    def backward(self, dy):
        xf, (n, c, h, w) = self._cache
        d = dy.reshape(n, self.c_out, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(n * h * w, -1)
        self.grads[0][...] = xf.T @ d
        self.grads[1][...] = dy.sum(axis=(0, 2, 3))
        return (d @ self.W.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y ** 2)


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class AvgPool2d(Layer):
    """Non-overlapping average pooling by an integer factor."""

    def __init__(self, factor: int = 2):
        super().__init__()
        self.f = factor

    def forward(self, x):
        n, c, h, w = x.shape
        f = self.f
        ho, wo = h // f, w // f
        # strided adds are much faster than a reduction over short axes
        y = np.zeros((n, c, ho, wo), dtype=x.dtype)
        for i in range(f):
            for j in range(f):
                y += x[:, :, i:i + f * ho:f, j:j + f * wo:f]
        return y * x.dtype.type(1.0 / (f * f))

    def backward(self, dy):
        f = self.f
        return np.repeat(np.repeat(dy, f, axis=2), f, axis=3) / (f * f)


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        super().__init__()
        self.layers = list(layers)
        self.params = [p for l in self.layers for p in l.params]
        self.grads = [g for l in self.layers for g in l.grads]

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x

    def backward(self, dy):
        for l in reversed(self.layers):
            dy = l.backward(dy)
            if dy is None:
                break
        return dy

    __call__ = forward


# -- parameter utilities ------------------------------------------------------

def copy_params(dst: Sequence[np.ndarray], src: Sequence[np.ndarray]):
    for d, s in zip(dst, src):
        d[...] = s


def polyak(dst: Sequence[np.ndarray], src: Sequence[np.ndarray], tau: float):
    """``dst <- (1 - tau) dst + tau src``; tau = 1 is a hard copy."""
    if tau >= 1.0:
        copy_params(dst, src)
        return
    for d, s in zip(dst, src):
        d *= (1.0 - tau)
        d += tau * s


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self) -> list:
        return self.m + self.v

    def load_state(self, arrays: Sequence[np.ndarray], t: int):
        n = len(self.params)
        copy_params(self.m, arrays[:n])
        copy_params(self.v, arrays[n:2 * n])
        self.t = int(t)


# -- losses -----------------------------------------------------------------------

def mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def huber(pred, target, delta: float = 1.0):
    """Mean Huber loss and its gradient with respect to ``pred``."""
    diff = pred - target
    a = np.abs(diff)
    quad = np.minimum(a, delta)
    loss = 0.5 * quad ** 2 + delta * (a - quad)
    return float(np.mean(loss)), np.clip(diff, -delta, delta) / diff.size


# -- gradient checking ------------------------------------------------------------

def grad_check_fn(params: Sequence[np.ndarray], loss_and_grads: Callable, n_probe: int = 40,
                  h: float = 1e-4, rng=None, atol: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads()`` evaluates the loss at the current parameter values
    and returns ``(loss, grads)`` with one gradient array per parameter.
    Probes ``n_probe`` random coordinates; the step is ``h * max(1, |p|)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = loss_and_grads()
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    sizes = np.array([p.size for p in params])
    live = np.flatnonzero(sizes)
    worst = 0.0
    for _ in range(n_probe):
        k = int(rng.choice(live, p=sizes[live] / sizes[live].sum()))
        idx = int(rng.integers(params[k].size))
        flat = params[k].reshape(-1)
        orig = float(flat[idx])
        step = h * max(1.0, abs(orig))
        flat[idx] = orig + step
        lp, _ = loss_and_grads()
        flat[idx] = orig - step
        lm, _ = loss_and_grads()
        flat[idx] = orig
        num = (lp - lm) / (2.0 * step)
        ana = float(grads[k].reshape(-1)[idx])
        err = abs(num - ana) / max(abs(num), abs(ana), atol)
        worst = max(worst, err)
    return worst


def grad_check(net: Layer, x, loss: Callable, n_probe: int = 40, h: float = 1e-4, rng=None,
               check_input: bool = False) -> float:
    """Finite-difference check of ``net`` under ``loss(y) -> (value, dL/dy)``.

    With ``check_input`` the input gradient is probed as well.
    """
    def f():
        y = net.forward(x)
        val, dy = loss(y)
        dx = net.backward(dy)
        if check_input:
            return val, list(net.grads) + [dx]
        return val, list(net.grads)

    params = list(net.params) + ([x] if check_input else [])
    return grad_check_fn(params, f, n_probe=n_probe, h=h, rng=rng)
