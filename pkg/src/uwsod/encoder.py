"""Strided convolutional encoder and top-down pyramid fusion.

The encoder is a small four-stage stack: a two-block stem reaching stride 4,
then three stride-2 stages, giving features at strides 4/8/16/32.  The fuser
projects every stage to a common width, builds a top-down sum pyramid, and
fuses all levels at stride 4 into the shared base representation.
"""

from __future__ import annotations

from . import ops
from .errors import ValidationError
from .nn import Conv2d, ConvBlock, Module, ModuleList, Sequential


class Encoder(Module):
    def __init__(self, channels=(32, 64, 128, 256), *, rng):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.stem = Sequential(
            ConvBlock(3, max(c1 // 2, 8), 3, rng=rng, stride=2, norm="batch"),
            ConvBlock(max(c1 // 2, 8), c1, 3, rng=rng, stride=2, norm="batch"),
        )
        self.stage2 = ConvBlock(c1, c2, 3, rng=rng, stride=2, norm="batch")
        self.stage3 = ConvBlock(c2, c3, 3, rng=rng, stride=2, norm="batch")
        self.stage4 = ConvBlock(c3, c4, 3, rng=rng, stride=2, norm="batch")

    def forward(self, image):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValidationError(f"encoder expects (B,3,H,W), got {image.shape}")
        h, w = image.shape[2], image.shape[3]
        if h % 32 or w % 32:
            raise ValidationError(f"input extents must be divisible by 32, got {h}x{w}")
        s1 = self.stem(image)
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        s4 = self.stage4(s3)
        return s1, s2, s3, s4


class PyramidFuser(Module):
    """Lateral 1x1 projections, top-down additive pyramid, stride-4 fusion.

    The laterals are bare convolutions; only the final fusion block carries
    GroupNorm and ReLU.
    """

    def __init__(self, stage_channels, base_channels: int, *, rng):
        super().__init__()
        self.laterals = ModuleList(
            [Conv2d(c, base_channels, 1, rng=rng) for c in stage_channels])
        self.fuse = ConvBlock(4 * base_channels, base_channels, 1, rng=rng,
                              norm="group", act=True)

    def forward(self, stages):
        if len(stages) != 4:
            raise ValidationError(f"expected 4 stages, got {len(stages)}")
        projected = [lat(s) for lat, s in zip(self.laterals, stages)]
        pyramid = [None] * 4
        pyramid[3] = projected[3]
        for i in (2, 1, 0):
            up = ops.resize_bilinear(pyramid[i + 1], projected[i].shape[2:])
            pyramid[i] = projected[i] + up
        target = pyramid[0].shape[2:]
        aligned = [pyramid[0]] + [ops.resize_bilinear(p, target) for p in pyramid[1:]]
        base = self.fuse(ops.concat_channels(aligned))
        return pyramid, base
