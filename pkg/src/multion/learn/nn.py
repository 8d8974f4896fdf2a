"""Small neural-network layers with hand-written reverse passes.

Tensors are channels-last: images are (B, H, W, C). Each module caches
what its backward pass needs during ``forward``; ``backward`` takes the
gradient of the loss with respect to the module output, accumulates
parameter gradients and returns the gradient with respect to the input.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ShapeError


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


def orthogonal(shape: tuple[int, int], rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """Orthogonal (rows, cols) matrix: orthonormal rows or columns, whichever is fewer."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Module:
    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, value in vars(self).items():
            if isinstance(value, Param):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_params(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{name}.{i}.")

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0

    def __call__(self, x):
        return self.forward(x)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0, dtype=np.float32):
        # stored (in, out) so forward is x @ W
        self.W = Param(orthogonal((n_out, n_in), rng, gain).T.astype(dtype).copy())
        self.b = Param(np.zeros(n_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeError(f"linear layer expects {self.W.shape[0]} inputs, got {x.shape[-1]}")
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.W.grad += self._x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.W.value.T


class Conv2d(Module):
    """3x3 (or k x k) convolution, stride 1, no padding."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3, gain: float = 1.0, dtype=np.float32):
        self.k = k
        self.c_in = c_in
        # rows ordered (c_in, ky, kx) to match the sliding-window layout
        self.W = Param(orthogonal((c_out, c_in * k * k), rng, gain).T.astype(dtype).copy())
        self.b = Param(np.zeros(c_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[-1] != self.c_in:
            raise ShapeError(f"conv expects (B, H, W, {self.c_in}), got {x.shape}")
        B, H, W, C = x.shape
        k = self.k
        if H < k or W < k:
            raise ShapeError(f"input {H}x{W} smaller than kernel {k}")
        Ho, Wo = H - k + 1, W - k + 1
        # (ky, kx, C) column order keeps channels contiguous, which makes the copy cheap
        cols = np.concatenate([x[:, i : i + Ho, j : j + Wo, :] for i in range(k) for j in range(k)], axis=-1)
        cols = cols.reshape(B * Ho * Wo, k * k * C)
        self._cols = cols
        self._in_shape = x.shape
        out = cols @ self._w_kkc() + self.b.value
        return out.reshape(B, Ho, Wo, -1)

    def _w_kkc(self) -> np.ndarray:
        k, C = self.k, self.c_in
        return self.W.value.reshape(C, k, k, -1).transpose(1, 2, 0, 3).reshape(k * k * C, -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        B, H, W, C = self._in_shape
        k = self.k
        Ho, Wo = H - k + 1, W - k + 1
        d = dout.reshape(B * Ho * Wo, -1)
        gw = (self._cols.T @ d).reshape(k, k, C, -1).transpose(2, 0, 1, 3).reshape(C * k * k, -1)
        self.W.grad += gw
        self.b.grad += d.sum(axis=0)
        dcols = (d @ self._w_kkc().T).reshape(B, Ho, Wo, k * k, C)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i : i + Ho, j : j + Wo, :] += dcols[:, :, :, i * k + j]
        return dx


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Tanh(Module):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dout):
        return dout * (1.0 - self._y * self._y)


class Sigmoid(Module):
    def forward(self, x):
        # split by sign so large magnitudes never overflow
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, dout):
        return dout * self._y * (1.0 - self._y)


class LayerNorm(Module):
    def __init__(self, n: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.gain = Param(np.ones(n, dtype=dtype))
        self.bias = Param(np.zeros(n, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._xhat, self._inv = xhat, inv
        return xhat * self.gain.value + self.bias.value

    def backward(self, dout):
        xhat, inv = self._xhat, self._inv
        self.gain.grad += (dout * xhat).sum(axis=0)
        self.bias.grad += dout.sum(axis=0)
        dxhat = dout * self.gain.value
        n = xhat.shape[-1]
        return inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class Adam:
    """Adaptive-moment gradient descent over a fixed list of parameters."""

    def __init__(self, params: list[Param], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step = self.lr * math.sqrt(c2) / c1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.value -= (step * m / (np.sqrt(v) + self.eps)).astype(p.value.dtype)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for i in range(len(self.params)):
            self.m[i][...] = state[f"m{i}"]
            self.v[i][...] = state[f"v{i}"]
