"""Channel-axis Fourier transforms and frequency-domain change learning.

The transform runs along the channel dimension independently at every
spatial location: forward is unnormalized, inverse carries the 1/C
factor, so idft(dft(x)) == x and sum|x|^2 == (1/C) sum|X|^2. The change
module applies two learnable complex channel-mixing stages with a SiLU
between them and keeps the real part after inversion.
"""

from __future__ import annotations

import functools

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Module, ModuleList, Parameter
from .tensor import Tensor, silu

__all__ = ["ComplexTensor", "dft_channels", "idft_channels",
           "FreqDomainConv", "ChangeFftModule"]


class ComplexTensor:
    """Paired real/imaginary tensors of identical shape."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise ShapeError(
                f"real/imaginary shape mismatch: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @property
    def shape(self):
        return self.re.shape

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"


@functools.lru_cache(maxsize=64)
def _fourier_basis(c: int, dtype_name: str):
    """cos/sin matrices B[k, n] = cos|sin(2*pi*k*n / c), computed at 64-bit."""
    k = np.arange(c).reshape(-1, 1)
    n = np.arange(c).reshape(1, -1)
    ang = 2.0 * np.pi * k * n / c
    dtype = np.dtype(dtype_name)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _channel_count(x: Tensor) -> int:
    if x.ndim == 3:
        return x.shape[0]
    if x.ndim == 4:
        return x.shape[1]
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def dft_channels(x: Tensor) -> ComplexTensor:
    """Unnormalized forward transform along the channel axis.

    Bin k at each location: sum_c x[c] * exp(-2j*pi*k*c/C).
    """
    c = _channel_count(x)
    cos_m, sin_m = _fourier_basis(c, x.data.dtype.name)
    re = ops.channel_matmul(Tensor(cos_m, dtype=x.data.dtype), x)
    im = ops.channel_matmul(Tensor(-sin_m, dtype=x.data.dtype), x)
    return ComplexTensor(re, im)


def idft_channels(spec: ComplexTensor) -> ComplexTensor:
    """Inverse transform with 1/C normalization; output stays complex."""
    c = _channel_count(spec.re)
    dtype = spec.re.data.dtype
    cos_m, sin_m = _fourier_basis(c, dtype.name)
    cos_t = Tensor(cos_m, dtype=dtype)
    sin_t = Tensor(sin_m, dtype=dtype)
    scale = 1.0 / c
    re = (ops.channel_matmul(cos_t, spec.re)
          - ops.channel_matmul(sin_t, spec.im)) * scale
    im = (ops.channel_matmul(sin_t, spec.re)
          + ops.channel_matmul(cos_t, spec.im)) * scale
    return ComplexTensor(re, im)


class FreqDomainConv(Module):
    """Learnable complex linear map over the channel spectrum plus bias.

    out[k] = sum_c W[k,c] * spec[c] + B[k] with the complex product
    expanded as real = Wr*Fr - Wi*Fi + Br, imag = Wi*Fr + Wr*Fi + Bi.
    Weights start at the complex identity plus uniform noise so the stage
    is near-identity before training.
    """

    def __init__(self, channels: int, *, rng: np.random.Generator,
                 dtype=np.float32, noise: float = 0.01):
        super().__init__()
        self.channels = channels
        eye = np.eye(channels)
        self.weight_re = Parameter(
            (eye + rng.uniform(-noise, noise, (channels, channels)))
            .astype(dtype), init="identity-complex")
        self.weight_im = Parameter(
            rng.uniform(-noise, noise, (channels, channels)).astype(dtype),
            init="identity-complex")
        self.bias_re = Parameter(np.zeros(channels, dtype=dtype), init="zeros")
        self.bias_im = Parameter(np.zeros(channels, dtype=dtype), init="zeros")

    def forward(self, spec: ComplexTensor) -> ComplexTensor:
        if _channel_count(spec.re) != self.channels:
            raise ShapeError(
                f"spectrum has {_channel_count(spec.re)} channels, "
                f"stage expects {self.channels}")
        bshape = (self.channels, 1, 1)
        re = (ops.channel_matmul(self.weight_re, spec.re)
              - ops.channel_matmul(self.weight_im, spec.im)
              + self.bias_re.reshape(bshape))
        im = (ops.channel_matmul(self.weight_im, spec.re)
              + ops.channel_matmul(self.weight_re, spec.im)
              + self.bias_im.reshape(bshape))
        return ComplexTensor(re, im)


def fdconv(spec: ComplexTensor, params: FreqDomainConv) -> ComplexTensor:
    return params(spec)


def _complex_silu(spec: ComplexTensor) -> ComplexTensor:
    # SiLU applied independently to the real and imaginary parts
    return ComplexTensor(silu(spec.re), silu(spec.im))


class ChangeFftModule(Module):
    """Two consecutive frequency-domain convolutions per pyramid level.

    Per level: channel DFT -> stage one -> SiLU on both parts -> stage
    two -> inverse DFT -> real part. Output shapes equal input shapes.
    """

    def __init__(self, channels: tuple[int, ...] | list[int], *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if len(channels) != 4:
            raise ConfigError(
                f"change module expects 4 pyramid levels, got {len(channels)}")
        self.channels = tuple(channels)
        self.stages = ModuleList(
            ModuleList([FreqDomainConv(c, rng=rng, dtype=dtype),
                        FreqDomainConv(c, rng=rng, dtype=dtype)])
            for c in channels)

    def forward_level(self, x: Tensor, level: int) -> Tensor:
        first, second = self.stages[level][0], self.stages[level][1]
        spec = dft_channels(x)
        spec = first(spec)
        spec = _complex_silu(spec)
        spec = second(spec)
        return idft_channels(spec).re

    def forward(self, pyramid):
        levels = list(pyramid)
        if len(levels) != 4:
            raise ConfigError(
                f"change module expects a 4-level pyramid, got {len(levels)}")
        for lvl, t in enumerate(levels):
            if _channel_count(t) != self.channels[lvl]:
                raise ShapeError(
                    f"level {lvl + 1} has {_channel_count(t)} channels, "
                    f"module expects {self.channels[lvl]}")
        return [self.forward_level(t, i) for i, t in enumerate(levels)]
