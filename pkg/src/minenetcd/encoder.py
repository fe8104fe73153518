"""Weight-shared residual encoder producing the 4-level feature pyramid.

The two temporal images run through one parameter set; level l of the
pyramid has C*2^(l-1) channels at 1/2^(l+1) of the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module, ModuleList
from .tensor import Tensor, relu

__all__ = ["EncoderConfig", "FeaturePyramid", "ResidualBackbone",
           "SiameseEncoder", "feature_difference"]


@dataclass(frozen=True)
class EncoderConfig:
    backbone_kind: str = "resnet-tiny"
    base_channels: int = 64
    blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    in_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 8:
            raise ConfigError(
                f"base_channels must be >= 8, got {self.base_channels}")
        if len(self.blocks) != 4 or any(n < 1 for n in self.blocks):
            raise ConfigError(
                f"blocks must be 4 positive counts, got {self.blocks}")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def level_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)


class FeaturePyramid:
    """Ordered 4-level stack; channels double and spatial halves per level."""

    __slots__ = ("levels",)

    def __init__(self, levels):
        levels = list(levels)
        if len(levels) != 4:
            raise ShapeError(f"pyramid needs exactly 4 levels, got {len(levels)}")
        for lo, hi in zip(levels, levels[1:]):
            cl, hl, wl = lo.shape[-3:]
            cu, hu, wu = hi.shape[-3:]
            if cu != 2 * cl or hl != 2 * hu or wl != 2 * wu:
                raise ShapeError(
                    f"pyramid law violated between levels: {lo.shape} -> {hi.shape}")
        self.levels = levels

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return 4

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    @property
    def shapes(self):
        return [t.shape for t in self.levels]


class ResidualBlock(Module):
    """conv-BN-ReLU x2 with a skip; strided variants project the skip."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, *,
                 rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, padding=1,
                            bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, padding=1,
                            bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride=stride, bias=False,
                               rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return relu(out + skip)


class ResidualBackbone(Module):
    """Compact residual CNN: stride-2 stem conv + stride-2 pool, then four
    stages of residual blocks (stages 2-4 open with a strided block)."""

    def __init__(self, config: EncoderConfig, *, rng, dtype=np.float32):
        super().__init__()
        if config.backbone_kind != "resnet-tiny":
            raise ConfigError(
                f"unknown backbone kind {config.backbone_kind!r}; "
                "only 'resnet-tiny' ships with this package")
        self.config = config
        c = config.base_channels
        self.stem_conv = Conv2d(config.in_channels, c, 7, stride=2, padding=3,
                                bias=False, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(c, dtype=dtype)
        widths = config.level_channels
        stages = []
        in_ch = c
        for lvl, (n_blocks, out_ch) in enumerate(zip(config.blocks, widths)):
            blocks = []
            for b in range(n_blocks):
                stride = 2 if (b == 0 and lvl > 0) else 1
                blocks.append(ResidualBlock(in_ch, out_ch, stride,
                                            rng=rng, dtype=dtype))
                in_ch = out_ch
            stages.append(ModuleList(blocks))
        self.stage1, self.stage2, self.stage3, self.stage4 = stages

    def forward(self, image: Tensor) -> FeaturePyramid:
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(
                f"input spatial size must be divisible by 32, got {h}x{w}")
        x = relu(self.stem_bn(self.stem_conv(image)))
        # avg (not max) stem pool: keeps fractional edge coverage in the
        # level-1 features, which the 4x-upsampled head needs to localize
        # region boundaries below its grid spacing
        x = ops.avg_pool2d(x, 2)
        levels = []
        for stage in (self.stage1, self.stage2, self.stage3, self.stage4):
            for block in stage:
                x = block(x)
            levels.append(x)
        return FeaturePyramid(levels)


class SiameseEncoder(Module):
    """One backbone applied identically to both temporal images."""

    def __init__(self, config: EncoderConfig, *, rng, dtype=np.float32):
        super().__init__()
        self.backbone = ResidualBackbone(config, rng=rng, dtype=dtype)

    def forward(self, image_a: Tensor, image_b: Tensor):
        return self.backbone(image_a), self.backbone(image_b)


def feature_difference(a: FeaturePyramid, b: FeaturePyramid) -> FeaturePyramid:
    """Elementwise pre-minus-post difference, all four levels."""
    diffs = []
    for lvl, (fa, fb) in enumerate(zip(a, b)):
        if fa.shape != fb.shape:
            raise ShapeError(
                f"level {lvl + 1} shape mismatch: {fa.shape} vs {fb.shape}")
        diffs.append(fa - fb)
    return FeaturePyramid(diffs)
