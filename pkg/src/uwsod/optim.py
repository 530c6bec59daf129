"""AdamW with decoupled weight decay, cosine schedule, clipping, and EMA."""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import NumericError, ValidationError
from .nn import Module, Parameter


class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Per step with learning rate lr: parameters are first shrunk by
    (1 - lr * weight_decay), then moved by the bias-corrected moment update
    lr * m_hat / (sqrt(v_hat) + eps).  Decay applies to every parameter.
    """

    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.named_params = [(n, p) for n, p in named_params]
        if not self.named_params:
            raise ValidationError("AdamW needs at least one parameter")
        for n, p in self.named_params:
            if not isinstance(p, Parameter):
                raise ValidationError(f"{n} is not a Parameter")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {lr}")
        for name, p in self.named_params:
            if p.grad is None:
                raise ValidationError(f"no gradient for parameter {name}")
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for (name, p), m, v in zip(self.named_params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()


def cosine_lr(step: int, total_steps: int, lr_max: float = 1e-4,
              lr_min: float = 1e-6) -> float:
    """Cosine decay from lr_max at step 0 to lr_min at step total_steps."""
    if total_steps <= 0:
        raise ValidationError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def clip_global_norm(params, max_norm: float = 1.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm (accumulated in float64).
    """
    if max_norm <= 0:
        raise ValidationError(f"max_norm must be positive, got {max_norm}")
    grads = [p.grad for p in params if p.grad is not None]
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericError("non-finite global gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class EmaTracker:
    """Exponential moving average of parameters for evaluation.

    Shadows start as copies of the parameters; update after each optimizer
    step moves them by shadow <- decay * shadow + (1 - decay) * param.
    """

    def __init__(self, named_params, decay: float = 0.999):
        if not 0.0 <= decay < 1.0:
            raise ValidationError(f"decay must be in [0,1), got {decay}")
        self.decay = decay
        self.named_params = [(n, p) for n, p in named_params]
        self.shadows = {n: p.data.copy() for n, p in self.named_params}

    def update(self) -> None:
        d = self.decay
        for name, p in self.named_params:
            s = self.shadows[name]
            s *= d
            s += (1.0 - d) * p.data

    @contextmanager
    def applied(self, module: Module):
        """Swap shadow values into the module's parameters for the block."""
        saved = {}
        for name, p in self.named_params:
            saved[name] = p.data.copy()
            np.copyto(p.data, self.shadows[name])
        try:
            yield module
        finally:
            for name, p in self.named_params:
                np.copyto(p.data, saved[name])
