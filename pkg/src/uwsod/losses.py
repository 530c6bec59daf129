"""Supervision targets and the cooperative structural loss family.

Targets built from a binary mask:

* boundary: the binarized 3x3 morphological gradient of the mask;
* mask_small, boundary_small: soft bilinear downsamplings to the
  base-feature resolution (no re-thresholding, which would destroy thin
  boundaries);
* coord: the blurred boundary band avg_pool(max_pool(boundary_small)),
  the band where the coordination gate is trained to favor the
  boundary-sensitive branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from . import ops
from .errors import ValidationError
from .tensor import Tensor, assert_all_finite

REGION_EPS = 1e-8
DICE_EPS = 1.0


@dataclass
class SupervisionTargets:
    mask: Tensor          # (B,1,H,W) binary
    mask_small: Tensor    # (B,1,h,w) soft
    boundary: Tensor      # (B,1,H,W) binary
    boundary_small: Tensor
    coord: Tensor         # (B,1,h,w) in [0,1]


@dataclass
class LossBundle:
    total: Tensor
    l_seg: float
    l_bs: float
    l_scm: float
    l_total: float
    weights: dict


def boundary_from_mask(mask: np.ndarray) -> np.ndarray:
    """Binary boundary = binarize(dilate3x3(M) - erode3x3(M)), replicate border."""
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ValidationError("boundary_from_mask requires a strictly binary mask")
    size = (1,) * (m.ndim - 2) + (3, 3)
    grad = maximum_filter(m, size=size, mode="nearest") \
        - minimum_filter(m, size=size, mode="nearest")
    return (grad > 0).astype(m.dtype)


def make_targets(masks: np.ndarray, base_hw, *, dilate_kernel: int = 5,
                 smooth_kernel: int = 5, dtype=np.float32) -> SupervisionTargets:
    """Build every supervision target from full-resolution binary masks."""
    m = np.asarray(masks, dtype=dtype)
    if m.ndim != 4 or m.shape[1] != 1:
        raise ValidationError(f"masks must be (B,1,H,W), got {m.shape}")
    mask = Tensor(m)
    boundary = Tensor(boundary_from_mask(m))
    mask_small = ops.resize_bilinear(mask, base_hw)
    boundary_small = ops.resize_bilinear(boundary, base_hw)
    coord = coordination_target(boundary_small, dilate_kernel=dilate_kernel,
                                smooth_kernel=smooth_kernel)
    return SupervisionTargets(mask, mask_small, boundary, boundary_small, coord)


def coordination_target(boundary_small: Tensor, dilate_kernel: int = 5,
                        smooth_kernel: int = 5) -> Tensor:
    """Dilate then smooth the soft boundary: max-pool followed by avg-pool,
    both stride 1 with replicate padding."""
    dilated = ops.max_pool2d(boundary_small, dilate_kernel)
    return ops.avg_pool2d(dilated, smooth_kernel)


def structure_loss(logits: Tensor, target: Tensor, *, weight_amp: float = 5.0,
                   weight_pool: int = 15) -> Tensor:
    """Boundary-emphasized segmentation loss: weighted BCE + weighted region term.

    The per-pixel weight is 1 + amp * |avgpool(target) - target|, large where
    the target changes within the pooling window.  The region term is the
    Dice-form ratio 1 - (2*sum(w*p*t) + eps) / (sum(w*p) + sum(w*t) + eps),
    with sums per sample and the final value averaged over the batch.
    """
    assert_all_finite(logits.data, "structure_loss logits")
    if isinstance(target, np.ndarray):
        target = Tensor(target.astype(logits.data.dtype, copy=False))
    if target.shape != logits.shape:
        raise ValidationError(
            f"target shape {target.shape} != logits shape {logits.shape}")
    pooled = ops.avg_pool2d(target, weight_pool)
    weight = 1.0 + weight_amp * (pooled - target).abs()

    bce = ops.bce_with_logits(logits, target)
    axes = (1, 2, 3)
    wsum = weight.sum(axis=axes)
    wbce = (weight * bce).sum(axis=axes) / wsum

    prob = logits.sigmoid()
    inter = (weight * prob * target).sum(axis=axes)
    total = (weight * prob).sum(axis=axes) + (weight * target).sum(axis=axes)
    region = 1.0 - (inter * 2.0 + REGION_EPS) / (total + REGION_EPS)
    return (wbce + region).mean()


def boundary_loss(e_logits: Tensor, boundary_small: Tensor) -> Tensor:
    """Mean BCE-with-logits plus Dice with smoothing 1, summed over the batch."""
    if boundary_small.shape != e_logits.shape:
        raise ValidationError(
            f"boundary target {boundary_small.shape} != logits {e_logits.shape}")
    bce = ops.bce_with_logits(e_logits, boundary_small).mean()
    p = e_logits.sigmoid()
    inter = (p * boundary_small).sum()
    sums = p.sum() + boundary_small.sum()
    dice = 1.0 - (inter * 2.0 + DICE_EPS) / (sums + DICE_EPS)
    return bce + dice


def scm_loss(a_sc: Tensor, coord: Tensor) -> Tensor:
    """Mean BCE-with-logits of the gate logits against the soft boundary band."""
    if coord.shape != a_sc.shape:
        raise ValidationError(f"coord target {coord.shape} != logits {a_sc.shape}")
    return ops.bce_with_logits(a_sc, coord).mean()


def total_loss(features, targets: SupervisionTargets, *,
               lambda_final: float = 4.0, lambda_coarse: float = 0.25,
               lambda_low: float = 0.25, lambda_boundary: float = 1.0,
               lambda_coord: float = 1.0, weight_amp: float = 5.0,
               weight_pool: int = 15) -> LossBundle:
    """Combine per-head structure losses with boundary and coordination terms.

    Heads that the active model variant does not produce contribute nothing.
    """
    weights = dict(lambda_final=lambda_final, lambda_coarse=lambda_coarse,
                   lambda_low=lambda_low, lambda_boundary=lambda_boundary,
                   lambda_coord=lambda_coord)
    for name, v in weights.items():
        if v < 0:
            raise ValidationError(f"{name} must be >= 0, got {v}")

    def str_loss(logits, target):
        return structure_loss(logits, target, weight_amp=weight_amp,
                              weight_pool=weight_pool)

    seg_terms = []
    if features.s_final is not None and lambda_final > 0:
        seg_terms.append(str_loss(features.s_final, targets.mask) * lambda_final)
    if features.s_coarse is not None and lambda_coarse > 0:
        seg_terms.append(str_loss(features.s_coarse, targets.mask) * lambda_coarse)
    if features.s_low is not None and lambda_low > 0:
        seg_terms.append(str_loss(features.s_low, targets.mask_small) * lambda_low)

    l_seg = None
    for t in seg_terms:
        l_seg = t if l_seg is None else l_seg + t

    l_bs = None
    if features.e_logits is not None and lambda_boundary > 0:
        l_bs = boundary_loss(features.e_logits, targets.boundary_small)
    l_scm = None
    if features.a_sc is not None and lambda_coord > 0:
        l_scm = scm_loss(features.a_sc, targets.coord)

    total = l_seg
    if l_bs is not None:
        term = l_bs * lambda_boundary
        total = term if total is None else total + term
    if l_scm is not None:
        term = l_scm * lambda_coord
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("no active loss terms; check weights and variant")

    return LossBundle(
        total=total,
        l_seg=0.0 if l_seg is None else l_seg.item(),
        l_bs=0.0 if l_bs is None else l_bs.item(),
        l_scm=0.0 if l_scm is None else l_scm.item(),
        l_total=total.item(),
        weights=weights,
    )
