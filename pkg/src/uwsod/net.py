"""The full saliency network: encoder, specialization, coordination, decoding.

``SaliencyNet`` wires the pieces according to three variant switches used by
the ablation harness:

* ``branch_variant``: baseline (base features only), bs, rc, or full;
* ``coord_variant``: how the two branch features are blended (full only);
* ``decoder_variant``: how deep the coarse-to-fine decoding runs.

Absent variants skip module construction entirely, so parameter counts track
what is actually trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .branches import (BoundaryBranch, CoordinationGate, RegionBranch, blend,
                       discrepancy_map)
from .config import RunConfig
from .decoder import CoarseHead, LowResHead, RefineHead
from .encoder import Encoder, PyramidFuser
from .errors import ValidationError
from .nn import Conv2d, Module, Parameter
from .tensor import Tensor, default_dtype, use_dtype


@dataclass
class FeatureSet:
    """Every intermediate the model can produce; absent pieces stay None."""

    stages: list = field(default_factory=list)
    pyramid: list = field(default_factory=list)
    base: Tensor | None = None
    f_bs: Tensor | None = None
    f_rc: Tensor | None = None
    e_logits: Tensor | None = None
    e_hat: Tensor | None = None
    d_map: Tensor | None = None
    a_sc: Tensor | None = None
    w_map: Tensor | None = None
    f_d: Tensor | None = None
    s_low: Tensor | None = None
    s_coarse: Tensor | None = None
    s_final: Tensor | None = None
    m_hat: Tensor | None = None


class SaliencyNet(Module):
    def __init__(self, cfg: RunConfig, *, rng):
        super().__init__()
        cfg.validate()
        cu = cfg.base_channels
        self.branch_variant = cfg.branch_variant
        self.coord_variant = cfg.coord_variant
        self.decoder_variant = cfg.decoder_variant
        self.dtype = np.dtype(default_dtype())

        self.encoder = Encoder(cfg.encoder_channels, rng=rng)
        self.fuser = PyramidFuser(cfg.encoder_channels, cu, rng=rng)

        if self.branch_variant in ("bs", "full"):
            self.boundary = BoundaryBranch(cu, rng=rng,
                                           laplacian_enabled=cfg.laplacian_enabled)
        if self.branch_variant in ("rc", "full"):
            self.region = RegionBranch(cu, cfg.rc_kernels, rng=rng)
        if self.branch_variant == "full":
            if self.coord_variant == "scm":
                hidden = cfg.coord_hidden or cu // 2
                self.gate = CoordinationGate(cu, hidden, rng=rng)
            elif self.coord_variant == "scalar":
                self.gate_logit = Parameter(np.zeros((1, 1, 1, 1)),
                                            dtype=default_dtype())
            elif self.coord_variant == "concat":
                self.concat_fuse = Conv2d(2 * cu, cu, 3, rng=rng)

        self.low_head = LowResHead(cu, rng=rng)
        if self.decoder_variant in ("coarse", "full"):
            self.coarse_head = CoarseHead(cu, rng=rng)
        if self.decoder_variant == "full":
            self.refine_head = RefineHead(cu, rng=rng)

    # -- forward -------------------------------------------------------------

    def forward(self, image: Tensor) -> FeatureSet:
        if not isinstance(image, Tensor):
            raise ValidationError("SaliencyNet expects a Tensor input")
        if image.dtype != self.dtype:
            if image.requires_grad:
                raise ValidationError(
                    f"input dtype {image.dtype} != model dtype {self.dtype}")
            image = Tensor(image.data.astype(self.dtype))

        out = FeatureSet()
        out.stages = list(self.encoder(image))
        out.pyramid, out.base = self.fuser(out.stages)

        if self.branch_variant == "baseline":
            out.f_d = out.base
        elif self.branch_variant == "bs":
            out.f_bs, out.e_logits, out.e_hat = self.boundary(out.base)
            out.f_d = out.f_bs
        elif self.branch_variant == "rc":
            out.f_rc = self.region(out.base)
            out.f_d = out.f_rc
        else:
            out.f_bs, out.e_logits, out.e_hat = self.boundary(out.base)
            out.f_rc = self.region(out.base)
            out.d_map = discrepancy_map(out.f_bs, out.f_rc)
            out = self._coordinate(out)

        out.s_low = self.low_head(out.f_d)
        if self.decoder_variant == "low":
            out.m_hat = ops.resize_bilinear(out.s_low.sigmoid(), image.shape[2:])
            return out

        h4 = out.f_d.shape[2] * 4, out.f_d.shape[3] * 4
        if image.shape[2:] != h4:
            raise ValidationError(
                f"image extents {image.shape[2:]} must be 4x the base extents")
        out.s_coarse = self.coarse_head(out.f_d, out.s_low)
        if self.decoder_variant == "coarse":
            out.m_hat = out.s_coarse.sigmoid()
            return out

        out.s_final = self.refine_head(image, out.s_coarse, out.pyramid[0])
        out.m_hat = out.s_final.sigmoid()
        return out

    def _coordinate(self, out: FeatureSet) -> FeatureSet:
        b, _, h, w = out.base.shape
        if self.coord_variant == "scm":
            out.a_sc = self.gate(out.base, out.e_hat, out.d_map)
            out.w_map = out.a_sc.sigmoid()
            out.f_d = blend(out.w_map, out.f_bs, out.f_rc)
        elif self.coord_variant == "fixed":
            out.w_map = Tensor(np.full((b, 1, h, w), 0.5, dtype=self.dtype))
            out.f_d = blend(out.w_map, out.f_bs, out.f_rc)
        elif self.coord_variant == "scalar":
            gate = self.gate_logit.sigmoid()
            out.f_d = blend(gate, out.f_bs, out.f_rc)
            out.w_map = gate * Tensor(np.ones((b, 1, h, w), dtype=self.dtype))
        else:
            out.f_d = self.concat_fuse(
                ops.concat_channels([out.f_bs, out.f_rc]))
        return out


def build_model(cfg: RunConfig, seed_stream: int = 0) -> SaliencyNet:
    """Deterministic model construction from a validated config.

    Parameters are created in the precision named by ``cfg.precision``.
    ``seed_stream`` separates the init stream from other consumers of the
    run seed (data order, synthesis, ...).
    """
    rng = np.random.default_rng([cfg.seed, seed_stream])
    with use_dtype(np.float32 if cfg.precision == "float32" else np.float64):
        return SaliencyNet(cfg, rng=rng)
