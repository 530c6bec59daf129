"""Specialized feature branches and the spatial coordination gate.

The boundary branch sharpens the base features with a fixed Laplacian plus a
learnable high-pass path and predicts a boundary map.  The region branch adds
factorized large-kernel depthwise context as a residual.  The gate blends the
two per pixel from the base features, the predicted boundary, and the
branch-discrepancy map.
"""

from __future__ import annotations

from . import ops
from .errors import ValidationError
from .nn import BatchNorm2d, Conv2d, ConvBlock, Module, ModuleList


class HighPassBoost(Module):
    """Learnable high-pass: depthwise 3x3 -> pointwise 1x1 -> BN -> ReLU."""

    def __init__(self, channels: int, *, rng):
        super().__init__()
        self.depthwise = Conv2d(channels, channels, 3, rng=rng, groups=channels)
        self.pointwise = ConvBlock(channels, channels, 1, rng=rng, norm="batch")

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class BoundaryBranch(Module):
    def __init__(self, channels: int, *, rng, laplacian_enabled: bool = True):
        super().__init__()
        self.laplacian_enabled = laplacian_enabled
        self.high_pass = HighPassBoost(channels, rng=rng)
        self.mix = ConvBlock(2 * channels, channels, 3, rng=rng, norm="group")
        self.head = Conv2d(channels, 1, 1, rng=rng)

    def forward(self, base):
        edge = self.high_pass(base)
        if self.laplacian_enabled:
            edge = ops.laplacian2d(base) + edge
        features = self.mix(ops.concat_channels([base, edge]))
        e_logits = self.head(features)
        return features, e_logits, e_logits.sigmoid()


class AnisotropicContext(Module):
    """Depthwise 1xk then kx1 with replicate padding, then BN and ReLU."""

    def __init__(self, channels: int, k: int, *, rng):
        super().__init__()
        if k % 2 == 0:
            raise ValidationError(f"anisotropic kernel size must be odd, got {k}")
        self.row = Conv2d(channels, channels, (1, k), rng=rng, groups=channels,
                          pad_mode="replicate")
        self.col = Conv2d(channels, channels, (k, 1), rng=rng, groups=channels,
                          pad_mode="replicate", bias=False)
        self.norm = BatchNorm2d(channels)

    def forward(self, x):
        return self.norm(self.col(self.row(x))).relu()


class RegionBranch(Module):
    def __init__(self, channels: int, kernels=(7, 15), *, rng):
        super().__init__()
        self.contexts = ModuleList(
            [AnisotropicContext(channels, k, rng=rng) for k in kernels])
        self.merge = ConvBlock(len(kernels) * channels, channels, 1, rng=rng)
        self.project = Conv2d(channels, channels, 1, rng=rng)

    def forward(self, base):
        context = ops.concat_channels([ctx(base) for ctx in self.contexts])
        return base + self.project(self.merge(context))


class CoordinationGate(Module):
    """Per-pixel blend logits from (base, boundary prediction, discrepancy)."""

    def __init__(self, channels: int, hidden: int, *, rng):
        super().__init__()
        self.reduce = ConvBlock(channels + 2, hidden, 1, rng=rng)
        self.mix = ConvBlock(hidden, hidden, 3, rng=rng)
        self.head = Conv2d(hidden, 1, 1, rng=rng)

    def forward(self, base, e_hat, discrepancy):
        x = ops.concat_channels([base, e_hat, discrepancy])
        return self.head(self.mix(self.reduce(x)))


def discrepancy_map(f_bs, f_rc):
    """Channel-mean absolute difference between the two branch features."""
    return ops.channel_mean((f_bs - f_rc).abs())


def blend(w_map, f_bs, f_rc):
    """Convex per-pixel combination w*f_bs + (1-w)*f_rc (channel broadcast)."""
    return w_map * f_bs + (1.0 - w_map) * f_rc
