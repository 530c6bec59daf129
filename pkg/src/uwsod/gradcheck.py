"""Central finite-difference verification of reverse-mode gradients.

Checks are meaningful only in float64: the default probe step of 1e-4 sits
far below float32 resolution for O(1) values.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .tensor import Tensor, no_grad

DEFAULT_STEP = 1e-4
DEFAULT_FLOOR = 1e-8
DEFAULT_TOL = 1e-3


def finite_difference_check(fn, inputs, probes: int = 20, step: float = DEFAULT_STEP,
                            floor: float = DEFAULT_FLOOR, rng=None) -> float:
    """Worst relative error between analytic and numeric gradients of ``fn``.

    ``fn`` takes no arguments, closes over ``inputs`` (float64 Tensors with
    contiguous data), and returns a scalar Tensor.  One full backward pass
    computes analytic gradients; then ``probes`` randomly sampled coordinates
    are perturbed by ±``step`` and compared against the central difference.
    The relative error divides by max(|analytic|, |numeric|, ``floor``).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    inputs = [t for t in inputs if t.size > 0]
    if not inputs:
        raise ValidationError("finite_difference_check needs at least one input")
    for t in inputs:
        if not isinstance(t, Tensor) or t.data.dtype != np.float64:
            raise ValidationError("finite-difference checks require float64 Tensors")
        if not t.data.flags.c_contiguous:
            raise ValidationError("finite-difference checks require contiguous data")
        t.zero_grad()

    loss = fn()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValidationError("fn must return a scalar Tensor")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    for t in inputs:
        t.zero_grad()

    worst = 0.0
    for _ in range(probes):
        ti = int(rng.integers(len(inputs)))
        t = inputs[ti]
        fi = int(rng.integers(t.size))
        flat = t.data.reshape(-1)
        saved = flat[fi]
        with no_grad():
            flat[fi] = saved + step
            up = fn().item()
            flat[fi] = saved - step
            down = fn().item()
        flat[fi] = saved
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[ti].reshape(-1)[fi])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst
