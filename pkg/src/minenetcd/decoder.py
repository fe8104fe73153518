"""Multi-scale decoding of change representations into a probability map.

Pyramid pooling summarizes the deepest level at several grid sizes, a
top-down pathway merges the shallower levels, and a small convolutional
head upsamples 4x back to input resolution with a sigmoid output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Module, ModuleList
from .tensor import Tensor, concat, relu, sigmoid

__all__ = ["DecoderConfig", "PyramidPooling", "FpnFuse", "ChangeDecoder"]


@dataclass(frozen=True)
class DecoderConfig:
    fpn_channels: int = 128
    ppm_scales: tuple[int, ...] = (1, 2, 3, 6)
    out_channels: int = 1

    def __post_init__(self):
        scales = tuple(self.ppm_scales)
        if not scales or any(s < 1 for s in scales) or \
                any(a >= b for a, b in zip(scales, scales[1:])):
            raise ConfigError(
                f"ppm_scales must be strictly increasing and >= 1, got {scales}")
        if self.fpn_channels < 8:
            raise ConfigError(
                f"fpn_channels must be >= 8, got {self.fpn_channels}")
        object.__setattr__(self, "ppm_scales", scales)


class PyramidPooling(Module):
    """Multi-scale adaptive pooling over the deepest level, then fusion.

    Each scale: pool to s x s, 1x1 conv to D/len(scales) channels, and
    bilinear upsample back; the branches concat with a 1x1 projection of
    the input and a 3x3 conv fuses to D channels.
    """

    def __init__(self, in_channels: int, fpn_channels: int,
                 scales: tuple[int, ...], *, rng, dtype=np.float32):
        super().__init__()
        self.scales = scales
        branch_ch = fpn_channels // len(scales)
        self.input_proj = Conv2d(in_channels, fpn_channels, 1,
                                 rng=rng, dtype=dtype)
        self.branches = ModuleList(
            Conv2d(in_channels, branch_ch, 1, rng=rng, dtype=dtype)
            for _ in scales)
        self.fuse = Conv2d(fpn_channels + branch_ch * len(scales),
                           fpn_channels, 3, padding=1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if max(self.scales) > min(h, w):
            raise ConfigError(
                f"pooling scale {max(self.scales)} exceeds input size {h}x{w}")
        outs = [self.input_proj(x)]
        for scale, conv in zip(self.scales, self.branches):
            pooled = ops.adaptive_avg_pool2d(x, scale)
            outs.append(ops.bilinear_upsample(conv(pooled), h, w))
        return self.fuse(concat(outs, axis=-3))


class FpnFuse(Module):
    """Top-down lateral fusion of the four levels to a (D, H/4, W/4) map.

    Levels 1-3 get 1x1 laterals to D channels and a 3x3 smoothing conv
    after the upsampled upper level is added; the pooled deepest level
    enters the top of the pathway unchanged. All four are upsampled to
    the level-1 grid, concatenated, and fused by a 3x3 conv.
    """

    def __init__(self, level_channels, fpn_channels: int, *,
                 rng, dtype=np.float32):
        super().__init__()
        self.fpn_channels = fpn_channels
        self.level_channels = tuple(level_channels)
        self.laterals = ModuleList(
            Conv2d(c, fpn_channels, 1, rng=rng, dtype=dtype)
            for c in self.level_channels[:3])
        self.smooths = ModuleList(
            Conv2d(fpn_channels, fpn_channels, 3, padding=1,
                   rng=rng, dtype=dtype)
            for _ in range(3))
        self.fuse = Conv2d(4 * fpn_channels, fpn_channels, 3, padding=1,
                           rng=rng, dtype=dtype)

    def forward(self, pyramid, ppm_out: Tensor) -> Tensor:
        levels = list(pyramid)
        for lvl, (t, c) in enumerate(zip(levels, self.level_channels)):
            if t.shape[-3] != c:
                raise ShapeError(
                    f"level {lvl + 1} has {t.shape[-3]} channels, decoder "
                    f"expects {c}")
        laterals = [conv(t) for conv, t in zip(self.laterals, levels[:3])]
        tops = [None, None, None, ppm_out]
        for lvl in (2, 1, 0):
            up_h, up_w = laterals[lvl].shape[-2:]
            tops[lvl] = laterals[lvl] + ops.bilinear_upsample(
                tops[lvl + 1], up_h, up_w)
        merged = [smooth(tops[lvl]) for lvl, smooth in enumerate(self.smooths)]
        merged.append(tops[3])
        out_h, out_w = merged[0].shape[-2:]
        resized = [merged[0]] + [
            ops.bilinear_upsample(t, out_h, out_w) for t in merged[1:]]
        return self.fuse(concat(resized, axis=-3))


class ChangeDecoder(Module):
    """PPM + FPN fusion followed by the upsampling probability head."""

    def __init__(self, level_channels, config: DecoderConfig, *,
                 rng, dtype=np.float32):
        super().__init__()
        d = config.fpn_channels
        self.config = config
        self.ppm = PyramidPooling(level_channels[3], d, config.ppm_scales,
                                  rng=rng, dtype=dtype)
        self.fpn = FpnFuse(level_channels, d, rng=rng, dtype=dtype)
        self.head_conv = Conv2d(d, d, 3, padding=1, rng=rng, dtype=dtype)
        self.head_out = Conv2d(d, config.out_channels, 1, rng=rng, dtype=dtype)

    def fuse_features(self, pyramid) -> Tensor:
        return self.fpn(pyramid, self.ppm(list(pyramid)[3]))

    def forward(self, pyramid) -> Tensor:
        fused = self.fuse_features(pyramid)
        logits = self.head_out(relu(self.head_conv(fused)))
        h, w = logits.shape[-2:]
        return sigmoid(ops.bilinear_upsample(logits, 4 * h, 4 * w))
