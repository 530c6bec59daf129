"""Coarse-to-fine saliency decoding heads.

Three stages: a low-resolution prediction at the base-feature scale, a coarse
full-resolution prediction through two upsample+conv blocks, and a residual
refinement conditioned on the input image, the coarse logits, and reduced
stride-4 pyramid features.
"""

from __future__ import annotations

from . import ops
from .errors import ValidationError
from .nn import Conv2d, ConvBlock, Module, Sequential


class LowResHead(Module):
    def __init__(self, channels: int, *, rng):
        super().__init__()
        self.body = Sequential(
            ConvBlock(channels, channels // 2, 3, rng=rng),
            Conv2d(channels // 2, 1, 1, rng=rng),
        )

    def forward(self, features):
        return self.body(features)


class CoarseHead(Module):
    """concat(features, low logits) -> conv -> two [x2 upsample, conv] -> 1x1."""

    def __init__(self, channels: int, *, rng):
        super().__init__()
        half = channels // 2
        self.entry = ConvBlock(channels + 1, half, 3, rng=rng)
        self.up1 = ConvBlock(half, half, 3, rng=rng)
        self.up2 = ConvBlock(half, half, 3, rng=rng)
        self.head = Conv2d(half, 1, 1, rng=rng)

    def forward(self, features, low_logits):
        x = self.entry(ops.concat_channels([features, low_logits]))
        h, w = x.shape[2], x.shape[3]
        x = self.up1(ops.resize_bilinear(x, (2 * h, 2 * w)))
        x = self.up2(ops.resize_bilinear(x, (4 * h, 4 * w)))
        return self.head(x)


class RefineHead(Module):
    """Residual correction of the coarse logits at full resolution."""

    def __init__(self, channels: int, *, rng, guide_width: int = 16):
        super().__init__()
        self.reduce = Conv2d(channels, guide_width, 1, rng=rng)
        self.body = Sequential(
            ConvBlock(3 + 1 + guide_width, 32, 3, rng=rng),
            ConvBlock(32, 32, 3, rng=rng),
            Conv2d(32, 1, 1, rng=rng),
        )

    def forward(self, image, coarse_logits, p1):
        if image.shape[2:] != coarse_logits.shape[2:]:
            raise ValidationError(
                f"image {image.shape} vs coarse logits {coarse_logits.shape}")
        guide = ops.resize_bilinear(self.reduce(p1), image.shape[2:])
        residual = self.body(ops.concat_channels([image, coarse_logits, guide]))
        return coarse_logits + residual
