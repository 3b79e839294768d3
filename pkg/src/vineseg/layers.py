"""Forward operators of the segmentation network.

Tensors are ``float32`` numpy arrays shaped ``(channels, height, width)``.
Convolutions go through an im2col matrix product, processed in bands of
output rows so the column buffer stays bounded for large patches.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "ShapeError",
    "conv_output_size",
    "pool_output_size",
    "upconv_output_size",
    "conv_forward",
    "relu",
    "max_pool",
    "lrn",
    "up_conv_forward",
    "concat_channels",
    "softmax_channels",
]

# cap on im2col buffer elements per band (float32 -> 128 MiB)
_COL_BUDGET = 32 * 1024 * 1024


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operator."""


def _tensor(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {x.shape}")
    return x


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def pool_output_size(size: int, kernel: int, stride: int, rounding: str = "ceil") -> int:
    if rounding == "ceil":
        out = -(-(size - kernel) // stride) + 1
        # the last window must start inside the input
        if (out - 1) * stride >= size:
            out -= 1
        return out
    if rounding == "floor":
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown pool rounding {rounding!r}")


def upconv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - 1) * stride + kernel


def conv_forward(x, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2-D cross-correlation with zero padding.

    ``out[o, y, x] = bias[o] + sum_{c,i,j} in[c, y*s - p + i, x*s - p + j] * w[o, c, i, j]``
    """
    x = _tensor(x)
    w = np.asarray(weights, dtype=np.float32)
    b = np.asarray(bias, dtype=np.float32)
    if w.ndim != 4:
        raise ShapeError(f"weights must be rank 4 (out, in, kh, kw), got shape {w.shape}")
    n_out, n_in, kh, kw = w.shape
    c, h, wd = x.shape
    if n_in != c:
        raise ShapeError(f"weights expect {n_in} input channels, tensor has {c}")
    if b.shape != (n_out,):
        raise ShapeError(f"bias must have shape ({n_out},), got {b.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{wd} with padding {padding}")

    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    x = np.ascontiguousarray(x)
    sc, sh, sw = x.strides
    # windows[c, i, j, y, x] = x[c, y*s + i, x*s + j]
    windows = as_strided(
        x, shape=(c, kh, kw, ho, wo), strides=(sc, sh, sw, sh * stride, sw * stride), writeable=False
    )
    wmat = w.reshape(n_out, c * kh * kw)
    out = np.empty((n_out, ho, wo), dtype=np.float32)
    rows = max(1, _COL_BUDGET // max(1, c * kh * kw * wo))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        cols = windows[:, :, :, r0:r1, :].reshape(c * kh * kw, (r1 - r0) * wo)
        out[:, r0:r1, :] = (wmat @ cols).reshape(n_out, r1 - r0, wo)
    out += b[:, None, None]
    return out


def relu(x) -> np.ndarray:
    return np.maximum(_tensor(x), np.float32(0))


def max_pool(x, kernel: int, stride: int, rounding: str = "ceil") -> np.ndarray:
    """Max pooling; windows running past the border are clipped to it."""
    x = _tensor(x)
    c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    ho = pool_output_size(h, kernel, stride, rounding)
    wo = pool_output_size(w, kernel, stride, rounding)
    need_h = (ho - 1) * stride + kernel
    need_w = (wo - 1) * stride + kernel
    if need_h > h or need_w > w:
        x = np.pad(x, ((0, 0), (0, max(0, need_h - h)), (0, max(0, need_w - w))), constant_values=-np.inf)
    out = np.full((c, ho, wo), -np.inf, dtype=np.float32)
    for i in range(kernel):
        for j in range(kernel):
            np.maximum(out, x[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride], out=out)
    return out


def lrn(x, n: int = 5, alpha: float = 1e-4, beta: float = 0.75, k: float = 2.0) -> np.ndarray:
    """Across-channel local response normalization.

    ``out[c] = in[c] / (k + alpha / n * sum_{|c' - c| <= n // 2} in[c']**2) ** beta``
    """
    x = _tensor(x)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"LRN window must be a positive odd number, got {n}")
    half = n // 2
    sq = np.square(x, dtype=np.float64)
    csum = np.concatenate([np.zeros((1,) + sq.shape[1:]), np.cumsum(sq, axis=0)], axis=0)
    ch = x.shape[0]
    hi = np.minimum(np.arange(ch) + half + 1, ch)
    lo = np.maximum(np.arange(ch) - half, 0)
    window = csum[hi] - csum[lo]
    scale = (k + (alpha / n) * window) ** beta
    return (x / scale).astype(np.float32)


def up_conv_forward(x, weights, bias, stride: int) -> np.ndarray:
    """Transposed convolution (no padding).

    Weights are laid out ``(out, in, kh, kw)`` like ``conv_forward``; every
    input cell scatters ``in[c, y, x] * w[o, c]`` into the output window
    anchored at ``(y * stride, x * stride)``.
    """
    x = _tensor(x)
    w = np.asarray(weights, dtype=np.float32)
    b = np.asarray(bias, dtype=np.float32)
    if w.ndim != 4:
        raise ShapeError(f"weights must be rank 4 (out, in, kh, kw), got shape {w.shape}")
    n_out, n_in, kh, kw = w.shape
    c, h, wd = x.shape
    if n_in != c:
        raise ShapeError(f"weights expect {n_in} input channels, tensor has {c}")
    if b.shape != (n_out,):
        raise ShapeError(f"bias must have shape ({n_out},), got {b.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    ho = upconv_output_size(h, kh, stride)
    wo = upconv_output_size(wd, kw, stride)
    out = np.zeros((n_out, ho, wo), dtype=np.float32)
    # contributions[o, i, j, y, x] = sum_c w[o, c, i, j] * in[c, y, x]
    wmat = w.transpose(0, 2, 3, 1).reshape(n_out * kh * kw, c)
    flat = x.reshape(c, h * wd)
    rows = max(1, _COL_BUDGET // max(1, n_out * kh * kw * wd))
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        contrib = (wmat @ flat[:, r0 * wd : r1 * wd]).reshape(n_out, kh, kw, r1 - r0, wd)
        for i in range(kh):
            ys = r0 * stride + i
            for j in range(kw):
                out[:, ys : ys + stride * (r1 - r0 - 1) + 1 : stride, j : j + stride * (wd - 1) + 1 : stride] += contrib[:, i, j]
    out += b[:, None, None]
    return out


def concat_channels(a, b) -> np.ndarray:
    a, b = _tensor(a), _tensor(b)
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"cannot concatenate spatial shapes {a.shape[1:]} and {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


def softmax_channels(x) -> np.ndarray:
    """Per-position softmax over the channel axis, shifted by the channel max."""
    x = _tensor(x)
    if x.shape[0] < 1:
        raise ShapeError("softmax needs at least one channel")
    z = x - x.max(axis=0, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=0, keepdims=True)).astype(np.float32)

