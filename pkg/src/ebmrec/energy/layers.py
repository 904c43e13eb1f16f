"""Per-sample forward/backward kernels for the residual energy network.

Each kernel operates on a single sample ``(C, H, W)`` in float64.  Convolutions
are stride-1, zero-padded "same", lowered to a single BLAS matmul against a
(C*9, H*W) patch matrix built from nine row-contiguous slab copies; the input
gradient is the transposed convolution (flipped taps, swapped channels), so
every backward pass is exact to floating-point rounding and deterministic.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "sigmoid",
    "swish",
    "swish_backward",
    "conv3x3",
    "conv3x3_grad_weight",
    "conv3x3_grad_input",
    "conv1x1",
    "conv1x1_grad_weight",
    "conv1x1_grad_input",
    "mean_pool2",
    "mean_pool2_backward",
    "global_sum_pool",
    "global_sum_pool_backward",
]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of -|x| never overflows; the two branches share it
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish(x: np.ndarray) -> np.ndarray:
    """Smooth activation x * sigmoid(x)."""
    return x * sigmoid(x)


def swish_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return dy * (s + x * s * (1.0 - s))


def _im2col(x: np.ndarray) -> np.ndarray:
    """Patch matrix of a zero-padded (C, H, W) tensor, laid out (C*9, H*W)."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 3, 3, h, w))
    for a in range(3):
        for b in range(3):
            cols[:, a, b] = xp[:, a:a + h, b:b + w]
    return cols.reshape(c * 9, h * w)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None):
    """Same-padded 3x3 convolution. Returns (y, cols); cols feeds the weight grad."""
    cout = w.shape[0]
    _, h, wd = x.shape
    cols = _im2col(x)
    y = (w.reshape(cout, -1) @ cols).reshape(cout, h, wd)
    if b is not None:
        y += b[:, None, None]
    return y, cols


def conv3x3_grad_weight(cols: np.ndarray, dy: np.ndarray) -> np.ndarray:
    cout, h, w = dy.shape
    return (dy.reshape(cout, h * w) @ cols.T).reshape(cout, -1, 3, 3)


def conv3x3_grad_input(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # transpose of same-padded stride-1 conv = conv with rot180, in/out swapped
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = conv3x3(dy, wt)
    return dx


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pointwise convolution; w has shape (Cout, Cin, 1, 1)."""
    cin, h, wd = x.shape
    y = (w[:, :, 0, 0] @ x.reshape(cin, h * wd)).reshape(-1, h, wd)
    if b is not None:
        y += b[:, None, None]
    return y


def conv1x1_grad_weight(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.tensordot(dy, x, axes=([1, 2], [1, 2]))[:, :, None, None]


def conv1x1_grad_input(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    cout, h, wd = dy.shape
    return (w[:, :, 0, 0].T @ dy.reshape(cout, h * wd)).reshape(-1, h, wd)


def mean_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pooling; requires even H and W."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"mean_pool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def mean_pool2_backward(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) * 0.25


def global_sum_pool(x: np.ndarray) -> np.ndarray:
    return x.sum(axis=(1, 2))


def global_sum_pool_backward(dy: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.broadcast_to(dy[:, None, None], (dy.shape[0], h, w)).copy()
