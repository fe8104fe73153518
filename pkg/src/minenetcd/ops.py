"""Structured neural-net primitives on top of the tensor engine.

Everything here accepts (C,H,W) or (N,C,H,W) inputs; kernels are
implemented with im2col + BLAS matmul for speed, with the reduction
order fixed so outputs are bit-reproducible.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, make_op

__all__ = [
    "conv2d", "batch_norm", "max_pool2d", "avg_pool2d",
    "adaptive_avg_pool2d", "pool", "bilinear_upsample", "channel_matmul",
]


def _ensure_batched(x: Tensor):
    if x.ndim == 3:
        return reshape_view(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected 3- or 4-d input, got shape {x.shape}")


def reshape_view(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_grad(g.reshape(x.data.shape))

    return make_op(data, (x,), bwd)


def _unbatch(out: Tensor, squeeze: bool) -> Tensor:
    if not squeeze:
        return out
    return reshape_view(out, out.shape[1:])


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, oh, ow),
        (sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation with (C_out, C_in, kH, kW) weights.

    Output spatial size is floor((H + 2*padding - k)/stride) + 1 per axis.
    Differentiable w.r.t. input, weight, and bias.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x4, squeeze = _ensure_batched(x)
    n, cin, h, w = x4.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(
            f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})")

    if padding:
        xp = np.pad(x4.data, ((0, 0), (0, 0), (padding, padding),
                              (padding, padding)))
    else:
        xp = x4.data
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = _windows(xp, kh, kw, stride).reshape(n, cin * kh * kw, oh * ow)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, cout, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    parents = (x4, weight) if bias is None else (x4, weight, bias)

    def bwd(g):
        gm = g.reshape(n, cout, oh * ow)
        if bias is not None and bias.requires_grad:
            bias._accumulate_grad(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate_grad(dw.reshape(weight.data.shape))
        if x4.requires_grad:
            dcols = np.matmul(wmat.T, gm).reshape(n, cin, kh, kw, oh, ow)
            dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + oh * stride:stride,
                        j:j + ow * stride:stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x4._accumulate_grad(dxp)

    return _unbatch(make_op(out, parents, bwd), squeeze)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, eps: float = 1e-5,
               momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over the (N, H, W) axes.

    Train mode normalizes by batch statistics (biased variance) and
    updates the running arrays in place (unbiased variance, canonical
    momentum rule); eval mode normalizes by the running statistics.
    """
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    count = n * h * w
    shape_c = (1, c, 1, 1)
    if training:
        if count < 2:
            raise ValueError(
                "batch_norm train mode needs at least 2 elements per channel "
                f"(got N*H*W = {count})")
        mean = x4.mean(axis=(0, 2, 3), keepdims=True)
        centered = x4 - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.data.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(c) * (count / (count - 1))
        xhat = centered / (var + eps) ** 0.5
    else:
        mean_c = Tensor(running_mean.reshape(shape_c), dtype=x4.dtype)
        std_c = Tensor(np.sqrt(running_var.reshape(shape_c) + eps),
                       dtype=x4.dtype)
        xhat = (x4 - mean_c) / std_c
    out = xhat * gamma.reshape(shape_c) + beta.reshape(shape_c)
    return _unbatch(out, squeeze)


def max_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Window max pooling; ties route to the first window position."""
    if kernel < 1:
        raise ValueError(f"pool kernel must be >= 1, got {kernel}")
    stride = kernel if stride is None else stride
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    win = _windows(x4.data, kernel, kernel, stride)
    oh, ow = win.shape[-2:]
    flat = win.reshape(n, c, kernel * kernel, oh, ow)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def bwd(g):
        if x4.requires_grad:
            dx = np.zeros_like(x4.data)
            ni, ci, oy, ox = np.indices(idx.shape, sparse=False)
            rows = oy * stride + idx // kernel
            cols = ox * stride + idx % kernel
            np.add.at(dx, (ni, ci, rows, cols), g)
            x4._accumulate_grad(dx)

    return _unbatch(make_op(np.ascontiguousarray(out), (x4,), bwd), squeeze)


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    if kernel < 1:
        raise ValueError(f"pool kernel must be >= 1, got {kernel}")
    stride = kernel if stride is None else stride
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    win = _windows(x4.data, kernel, kernel, stride)
    oh, ow = win.shape[-2:]
    out = win.mean(axis=(2, 3))
    inv = 1.0 / (kernel * kernel)

    def bwd(g):
        if x4.requires_grad:
            dx = np.zeros_like(x4.data)
            gi = g * inv
            for i in range(kernel):
                for j in range(kernel):
                    dx[:, :, i:i + oh * stride:stride,
                       j:j + ow * stride:stride] += gi
            x4._accumulate_grad(dx)

    return _unbatch(make_op(np.ascontiguousarray(out), (x4,), bwd), squeeze)


def _bin_edges(n_in: int, n_out: int):
    starts = [(i * n_in) // n_out for i in range(n_out)]
    ends = [-(-((i + 1) * n_in) // n_out) for i in range(n_out)]
    return starts, ends


def adaptive_avg_pool2d(x: Tensor, out_size: int | tuple[int, int]) -> Tensor:
    """Average over equal-coverage bins down to (s, s) or (sh, sw)."""
    if isinstance(out_size, int):
        sh = sw = out_size
    else:
        sh, sw = out_size
    if sh < 1 or sw < 1:
        raise ValueError(f"adaptive pool target must be >= 1, got {sh}x{sw}")
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    if sh > h or sw > w:
        raise ShapeError(
            f"adaptive pool target {sh}x{sw} exceeds input {h}x{w}")
    ys, ye = _bin_edges(h, sh)
    xs, xe = _bin_edges(w, sw)
    out = np.empty((n, c, sh, sw), dtype=x4.data.dtype)
    for i in range(sh):
        for j in range(sw):
            out[:, :, i, j] = x4.data[:, :, ys[i]:ye[i], xs[j]:xe[j]].mean(
                axis=(2, 3))

    def bwd(g):
        if x4.requires_grad:
            dx = np.zeros_like(x4.data)
            for i in range(sh):
                for j in range(sw):
                    area = (ye[i] - ys[i]) * (xe[j] - xs[j])
                    dx[:, :, ys[i]:ye[i], xs[j]:xe[j]] += \
                        g[:, :, i:i + 1, j:j + 1] / area
            x4._accumulate_grad(dx)

    return _unbatch(make_op(out, (x4,), bwd), squeeze)


def pool(x: Tensor, kind: str, size) -> Tensor:
    """Dispatch to max / avg (window semantics) or adaptive_avg pooling."""
    if kind == "max":
        return max_pool2d(x, size)
    if kind == "avg":
        return avg_pool2d(x, size)
    if kind == "adaptive_avg":
        return adaptive_avg_pool2d(x, size)
    raise ValueError(f"unknown pool kind {kind!r}")


@functools.lru_cache(maxsize=128)
def _interp_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """1-d linear-interpolation matrix with half-pixel centers, clamped."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    m[rows, lo_c] += 1.0 - frac
    m[rows, hi_c] += frac
    return m.astype(np.dtype(dtype_name))


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear interpolation with half-pixel centers (corners not aligned)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"upsample target must be >= 1, got {out_h}x{out_w}")
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    if out_h < h or out_w < w:
        raise ValueError(
            f"upsample target {out_h}x{out_w} smaller than input {h}x{w}")
    dtype_name = x4.data.dtype.name
    ry = _interp_matrix(h, out_h, dtype_name)
    rx = _interp_matrix(w, out_w, dtype_name)
    out = np.matmul(ry, np.matmul(x4.data, rx.T))

    def bwd(g):
        if x4.requires_grad:
            x4._accumulate_grad(np.matmul(ry.T, np.matmul(g, rx)))

    return _unbatch(make_op(out, (x4,), bwd), squeeze)


def channel_matmul(weight: Tensor, x: Tensor) -> Tensor:
    """Apply a (K, C) matrix along the channel axis of a (...,C,H,W) tensor.

    out[..., k, h, w] = sum_c weight[k, c] * x[..., c, h, w]; differentiable
    w.r.t. both operands.
    """
    x4, squeeze = _ensure_batched(x)
    n, c, h, w = x4.shape
    k, c_w = weight.shape
    if c != c_w:
        raise ShapeError(
            f"channel_matmul mismatch: input has {c} channels, matrix expects {c_w}")
    xr = x4.data.reshape(n, c, h * w)
    out = np.matmul(weight.data, xr).reshape(n, k, h, w)

    def bwd(g):
        gm = g.reshape(n, k, h * w)
        if weight.requires_grad:
            dw = np.matmul(gm, xr.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate_grad(dw)
        if x4.requires_grad:
            x4._accumulate_grad(
                np.matmul(weight.data.T, gm).reshape(x4.data.shape))

    return _unbatch(make_op(out, (x4, weight), bwd), squeeze)
