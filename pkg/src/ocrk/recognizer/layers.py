"""Minimal NHWC convolution / dense layers with hand-written backward passes."""
from __future__ import annotations

import numpy as np


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    """2-D convolution on (batch, height, width, channels) tensors via im2col."""

    def __init__(self, name, in_ch, out_ch, kernel, stride=(1, 1), padding=(0, 0), rng=None, dtype=np.float32):
        self.name = name
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.in_ch = in_ch
        self.out_ch = out_ch
        kh, kw = self.kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot_uniform(rng, (kh, kw, in_ch, out_ch), kh * kw * in_ch, kh * kw * out_ch, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return [(f"{self.name}.weight", self.weight, self.grad_weight),
                (f"{self.name}.bias", self.bias, self.grad_bias)]

    def output_shape(self, h, w):
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1

    def forward(self, x, keep=True):
        B, H, W, C = x.shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        Ho, Wo = self.output_shape(H, W)
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
        cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=self.weight.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw, :]
        cols = cols.reshape(B * Ho * Wo, kh * kw * C)
        y = cols @ self.weight.reshape(-1, self.out_ch) + self.bias
        if keep:
            self._cache = (cols, x.shape, Ho, Wo)
        return y.reshape(B, Ho, Wo, self.out_ch)

    def backward(self, dy, need_input_grad=True):
        cols, (B, H, W, C), Ho, Wo = self._cache
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        dy2 = dy.reshape(-1, self.out_ch)
        self.grad_weight += (cols.T @ dy2).reshape(self.weight.shape)
        self.grad_bias += dy2.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (dy2 @ self.weight.reshape(-1, self.out_ch).T).reshape(B, Ho, Wo, kh, kw, C)
        dxp = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw, :] += dcols[:, :, :, i, j, :]
        return dxp[:, ph : ph + H, pw : pw + W, :]


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x, keep=True):
        mask = x > 0
        if keep:
            self._mask = mask
        return x * mask

    def backward(self, dy, need_input_grad=True):
        return dy * self._mask


class Dense:
    """Fully connected layer on (batch, features) inputs."""

    def __init__(self, name, in_features, out_features, rng=None, dtype=np.float32):
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot_uniform(rng, (in_features, out_features), in_features, out_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return [(f"{self.name}.weight", self.weight, self.grad_weight),
                (f"{self.name}.bias", self.bias, self.grad_bias)]

    def forward(self, x, keep=True):
        if keep:
            self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy, need_input_grad=True):
        self.grad_weight += self._x.T @ dy
        self.grad_bias += dy.sum(axis=0)
        if not need_input_grad:
            return None
        return dy @ self.weight.T
