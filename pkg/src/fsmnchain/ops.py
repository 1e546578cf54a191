"""Core differentiable kernels: affine, relu, 2-D convolution, log-softmax.

Each kernel is a small class whose ``forward`` caches what ``backward``
needs. Backward passes accumulate into the ``grad`` buffers of any Tensor
operands (parameters always, activations when a Tensor is passed) and
return the gradient with respect to the main input as an ndarray, so layers
chain on plain arrays. All derivatives are hand-derived; there is no
autograd anywhere in the package.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor


def _as_values(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.values
    return np.asarray(x, dtype=np.float64)


def logsumexp(x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Max-shifted log(sum(exp(x))); tolerates -inf entries."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all -inf rows sum to 0, log -> -inf
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


class Affine:
    """y = x @ w + b for x of shape (T, Din), w (Din, Dout), b (Dout,)."""

    def __init__(self, w: Tensor, b: Tensor):
        if w.values.ndim != 2 or b.values.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ConfigurationError(
                f"affine parameter shapes w={w.shape} b={b.shape} are inconsistent"
            )
        self.w = w
        self.b = b
        self._cache = None

    def forward(self, x) -> np.ndarray:
        xv = _as_values(x)
        if xv.ndim != 2 or xv.shape[1] != self.w.shape[0]:
            raise ConfigurationError(
                f"affine input shape {xv.shape} does not match weight shape {self.w.shape}"
            )
        self._cache = (x, xv)
        return xv @ self.w.values + self.b.values

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, xv = self._cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        self.w.add_grad(xv.T @ grad_out)
        self.b.add_grad(grad_out.sum(axis=0))
        dx = grad_out @ self.w.values.T
        if isinstance(x, Tensor):
            x.add_grad(dx)
        return dx

    def params(self) -> list[tuple[str, Tensor]]:
        return [("w", self.w), ("b", self.b)]


class Relu:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""

    def __init__(self):
        self._cache = None

    def forward(self, x) -> np.ndarray:
        xv = _as_values(x)
        mask = xv > 0.0
        self._cache = (x, mask)
        return np.where(mask, xv, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, mask = self._cache
        dx = np.where(mask, np.asarray(grad_out, dtype=np.float64), 0.0)
        if isinstance(x, Tensor):
            x.add_grad(dx)
        return dx


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride, padding: str):
    sh, sw = stride
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"kernel extents must be odd, got {kh}x{kw}")
    if sh not in (1, 2) or sw not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2 per axis, got {stride}")
    if padding == "same":
        out_h = -(-h // sh)
        out_w = -(-w // sw)
        pad_h = max((out_h - 1) * sh + kh - h, 0)
        pad_w = max((out_w - 1) * sw + kw - w, 0)
    elif padding == "valid":
        if kh > h or kw > w:
            raise ConfigurationError(
                f"kernel {kh}x{kw} exceeds input {h}x{w} in valid mode"
            )
        out_h = (h - kh) // sh + 1
        out_w = (w - kw) // sw + 1
        pad_h = pad_w = 0
    else:
        raise ConfigurationError(f"unknown padding mode {padding!r}")
    return out_h, out_w, pad_h, pad_w


class Conv2d:
    """2-D convolution on a (C, H, W) map with kernels (K, C, kh, kw).

    No bias term. Padding follows the usual "same"/"valid" conventions with
    the extra pixel of odd padding placed at the bottom/right. Implemented
    by patch extraction plus one matmul so the desk-scale training loop is
    not dominated by Python loops.
    """

    def __init__(self, kernels: Tensor, stride=(1, 1), padding: str = "same"):
        if kernels.values.ndim != 4:
            raise ConfigurationError(
                f"conv kernels must be rank 4 (K,C,kh,kw), got shape {kernels.shape}"
            )
        self.kernels = kernels
        self.stride = (int(stride[0]), int(stride[1]))
        self.padding = padding
        self._cache = None

    def forward(self, x) -> np.ndarray:
        xv = _as_values(x)
        if xv.ndim != 3:
            raise ConfigurationError(f"conv input must be rank 3 (C,H,W), got {xv.shape}")
        k, c, kh, kw = self.kernels.shape
        if xv.shape[0] != c:
            raise ConfigurationError(
                f"conv input channels {xv.shape[0]} != kernel channels {c}"
            )
        _, h, w = xv.shape
        sh, sw = self.stride
        out_h, out_w, pad_h, pad_w = _conv_geometry(h, w, kh, kw, self.stride, self.padding)
        pt, pl = pad_h // 2, pad_w // 2
        xpad = np.pad(xv, ((0, 0), (pt, pad_h - pt), (pl, pad_w - pl)))
        windows = np.lib.stride_tricks.sliding_window_view(xpad, (kh, kw), axis=(1, 2))
        windows = windows[:, ::sh, ::sw][:, :out_h, :out_w]
        cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, c * kh * kw)
        wmat = self.kernels.values.reshape(k, c * kh * kw)
        y = (cols @ wmat.T).T.reshape(k, out_h, out_w)
        self._cache = (x, cols, xpad.shape, (pt, pl), (out_h, out_w), (h, w))
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, cols, pad_shape, (pt, pl), (out_h, out_w), (h, w) = self._cache
        k, c, kh, kw = self.kernels.shape
        sh, sw = self.stride
        gflat = np.asarray(grad_out, dtype=np.float64).reshape(k, out_h * out_w)
        self.kernels.add_grad((gflat @ cols).reshape(k, c, kh, kw))
        dcols = (gflat.T @ self.kernels.values.reshape(k, -1))
        dcols = dcols.reshape(out_h, out_w, c, kh, kw).transpose(2, 0, 1, 3, 4)
        dxpad = np.zeros(pad_shape, dtype=np.float64)
        for di in range(kh):
            for dj in range(kw):
                dxpad[:, di:di + out_h * sh:sh, dj:dj + out_w * sw:sw] += dcols[..., di, dj]
        dx = dxpad[:, pt:pt + h, pl:pl + w]
        if isinstance(x, Tensor):
            x.add_grad(dx)
        return dx

    def params(self) -> list[tuple[str, Tensor]]:
        return [("kernels", self.kernels)]


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a (T, K) array."""
    xv = np.asarray(x, dtype=np.float64)
    return xv - logsumexp(xv, axis=-1, keepdims=True)


class LogSoftmax:
    """Row-wise log-softmax with the standard pullback dy - softmax * sum(dy)."""

    def __init__(self):
        self._cache = None

    def forward(self, x) -> np.ndarray:
        xv = _as_values(x)
        y = log_softmax(xv)
        self._cache = (x, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, y = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        dx = g - np.exp(y) * g.sum(axis=-1, keepdims=True)
        if isinstance(x, Tensor):
            x.add_grad(dx)
        return dx


def glorot_uniform(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(shape, -bound, bound)


def he_uniform(rng, fan_in: int, shape) -> np.ndarray:
    # For weights feeding a relu: keeps activation variance roughly constant
    # through depth, where the glorot bound shrinks the signal by ~sqrt(2)
    # per layer once the relu halves it.
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform_array(shape, -bound, bound)
