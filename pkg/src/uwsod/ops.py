"""Structured differentiable operations on NCHW tensors.

Everything here runs on numpy via im2col/matmul or separable matrix products
and registers hand-written backward closures on the global tape.  Padding is
always symmetric "same" padding for odd kernels: pad = (k - 1) // 2 per side.

Exactness guarantees relied on elsewhere:

* ``avg_pool2d`` maps a constant plane to the same constant bit-for-bit
  (window means are accumulated in float64, and an exactly representable
  integer-multiple sum divided by the window size rounds to the constant).
* ``laplacian2d`` maps a constant plane to exact zeros (symmetric stencil
  taps are summed pairwise so every partial sum is a power-of-two multiple).
* ``resize_bilinear`` to the identical size is an element-for-element
  pass-through.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ValidationError
from .tensor import Tensor, accumulate_grad, maybe_check_finite, record_op

_PAD_NUMPY_MODE = {"zeros": "constant", "reflect": "reflect", "replicate": "edge"}

# Fixed 4-neighbour Laplacian; not trainable.  laplacian2d reads its taps, so
# the self-check can corrupt this array and watch the invariants break.
LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0],
                             [1.0, -4.0, 1.0],
                             [0.0, 1.0, 0.0]], dtype=np.float32)


def _as_pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValidationError(f"{name} must be an int or a pair, got {v!r}")
        a, b = int(v[0]), int(v[1])
    else:
        a = b = int(v)
    if a < 1 or b < 1:
        raise ValidationError(f"{name} must be positive, got {v!r}")
    return a, b


def _check_nchw(x: Tensor, name: str) -> None:
    if not isinstance(x, Tensor):
        raise ValidationError(f"{name} must be a Tensor, got {type(x).__name__}")
    if x.ndim != 4:
        raise ValidationError(f"{name} must be NCHW (4d), got shape {x.shape}")


def _pad_hw(a: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    if mode not in _PAD_NUMPY_MODE:
        raise ValidationError(f"unknown pad mode {mode!r}")
    if ph == 0 and pw == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(a, width, mode=_PAD_NUMPY_MODE[mode])


def _pad_source_index(n: int, p: int, mode: str) -> np.ndarray:
    """For each padded position, the interior index it was copied from."""
    j = np.arange(n + 2 * p) - p
    if mode == "reflect":
        if p > n - 1:
            raise ValidationError(f"reflect pad {p} too large for axis of length {n}")
        return np.where(j < 0, -j, np.where(j >= n, 2 * n - 2 - j, j))
    if mode == "replicate":
        return np.clip(j, 0, n - 1)
    raise ValidationError(f"unknown pad mode {mode!r}")


def _fold_axis(a: np.ndarray, p: int, mode: str, axis: int) -> np.ndarray:
    """Adjoint of padding one axis: route padded-border gradient back inside."""
    if p == 0:
        return a
    n = a.shape[axis] - 2 * p
    if mode == "zeros":
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(p, p + n)
        return a[tuple(sl)]
    src = _pad_source_index(n, p, mode)
    moved = np.moveaxis(a, axis, 0)
    out = np.zeros((n,) + moved.shape[1:], dtype=a.dtype)
    np.add.at(out, src, moved)
    return np.moveaxis(out, 0, axis)


def _fold_pad_hw(a: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    return _fold_axis(_fold_axis(a, ph, mode, a.ndim - 2), pw, mode, a.ndim - 1)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, groups: int = 1, pad_mode: str = "zeros") -> Tensor:
    """Grouped 2d cross-correlation with same-size odd-kernel padding.

    ``x`` is (N, C_in, H, W); ``weight`` is (C_out, C_in // groups, kh, kw)
    with kh, kw odd; ``bias`` is (C_out,) or None.  Output spatial size is
    H // stride when stride divides H (same padding), else the usual
    (H + 2p - k) // stride + 1.
    """
    _check_nchw(x, "conv2d input")
    if weight.ndim != 4:
        raise ValidationError(f"conv2d weight must be 4d, got shape {weight.shape}")
    sh, sw = _as_pair(stride, "stride")
    n, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"conv2d kernels must be odd, got {kh}x{kw}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ValidationError(
            f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_in_g != c_in // groups:
        raise ValidationError(
            f"weight expects {c_in_g} channels per group, input has {c_in // groups}")
    if bias is not None and bias.shape != (c_out,):
        raise ValidationError(f"bias shape {bias.shape} != ({c_out},)")

    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = _pad_hw(x.data, ph, pw, pad_mode)
    hs = (h + 2 * ph - kh) // sh + 1
    ws = (w + 2 * pw - kw) // sw + 1
    g = groups
    cog = c_out // g

    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # (N, C, Hs, Ws, kh, kw) -> (g, N*Hs*Ws, Cg*kh*kw)
    cols = windows.reshape(n, g, c_in_g, hs, ws, kh, kw) \
                  .transpose(1, 0, 3, 4, 2, 5, 6) \
                  .reshape(g, n * hs * ws, c_in_g * kh * kw)
    w_g = weight.data.reshape(g, cog, c_in_g * kh * kw)
    out_g = np.matmul(cols, w_g.transpose(0, 2, 1))          # (g, NHW, Cog)
    out_data = out_g.reshape(g, n, hs, ws, cog) \
                    .transpose(1, 0, 4, 2, 3) \
                    .reshape(n, c_out, hs, ws)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, c_out, 1, 1)
    maybe_check_finite(out_data, f"conv2d({c_in}->{c_out}, {kh}x{kw}, groups={g})")

    requires = x.requires_grad or weight.requires_grad or (
        bias is not None and bias.requires_grad)
    out = Tensor(out_data, requires_grad=requires)

    def backward(grad_out):
        go_g = grad_out.reshape(n, g, cog, hs, ws) \
                       .transpose(1, 0, 3, 4, 2) \
                       .reshape(g, n * hs * ws, cog)
        if weight.requires_grad:
            gw = np.matmul(go_g.transpose(0, 2, 1), cols)
            accumulate_grad(weight, gw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            accumulate_grad(bias, grad_out.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(go_g, w_g)                     # (g, NHW, CgK)
            gc = gcols.reshape(g, n, hs, ws, c_in_g, kh, kw) \
                      .transpose(1, 0, 4, 5, 6, 2, 3) \
                      .reshape(n, c_in, kh, kw, hs, ws)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di:di + sh * hs:sh, dj:dj + sw * ws:sw] += gc[:, :, di, dj]
            accumulate_grad(x, _fold_pad_hw(gxp, ph, pw, pad_mode))

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# pooling


def _pool_prepare(x: Tensor, kernel, stride, pad_mode: str):
    _check_nchw(x, "pool input")
    kh, kw = _as_pair(kernel, "kernel")
    sh, sw = _as_pair(stride, "stride")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"pool kernels must be odd, got {kh}x{kw}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = _pad_hw(x.data, ph, pw, pad_mode)
    n, c, h, w = x.shape
    hs = (h + 2 * ph - kh) // sh + 1
    ws = (w + 2 * pw - kw) // sw + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return xp, windows, (kh, kw, sh, sw, ph, pw, hs, ws)


def max_pool2d(x: Tensor, kernel, stride=1, pad_mode: str = "replicate") -> Tensor:
    """Sliding-window maximum.  Gradient flows to the first maximum of each
    window in row-major scan order; ties later in the window get nothing."""
    xp, windows, (kh, kw, sh, sw, ph, pw, hs, ws) = _pool_prepare(
        x, kernel, stride, pad_mode)
    n, c = x.shape[0], x.shape[1]
    flat = windows.reshape(n, c, hs, ws, kh * kw)
    arg = np.argmax(flat, axis=-1)          # first occurrence, row-major
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(grad_out):
        hp, wp = xp.shape[2], xp.shape[3]
        di, dj = np.divmod(arg, kw)
        oi = np.arange(hs)[:, None] * sh
        oj = np.arange(ws)[None, :] * sw
        flat_idx = ((oi + di) * wp + (oj + dj)).reshape(n * c, hs * ws)
        gp = np.zeros((n * c, hp * wp), dtype=grad_out.dtype)
        rows = np.arange(n * c)[:, None]
        np.add.at(gp, (rows, flat_idx), grad_out.reshape(n * c, hs * ws))
        accumulate_grad(x, _fold_pad_hw(gp.reshape(n, c, hp, wp), ph, pw, pad_mode))

    record_op(out, backward)
    return out


def avg_pool2d(x: Tensor, kernel, stride=1, pad_mode: str = "replicate") -> Tensor:
    """Sliding-window mean, accumulated in float64 so that constant inputs
    under replicate padding come back bit-identical."""
    xp, windows, (kh, kw, sh, sw, ph, pw, hs, ws) = _pool_prepare(
        x, kernel, stride, pad_mode)
    out_data = windows.mean(axis=(-2, -1), dtype=np.float64).astype(x.dtype)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(grad_out):
        share = grad_out / (kh * kw)
        gp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                gp[:, :, di:di + sh * hs:sh, dj:dj + sw * ws:sw] += share
        accumulate_grad(x, _fold_pad_hw(gp, ph, pw, pad_mode))

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# bilinear resize


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """Row-interpolation matrix with half-pixel centers and edge clamping."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w1)
    np.add.at(m, (np.arange(n_out), i1), w1)
    return m.astype(dtype)


def resize_bilinear(x: Tensor, size) -> Tensor:
    """Separable bilinear resize to ``size=(H, W)`` with half-pixel sampling.

    Resizing to the input's own size returns the values untouched.
    """
    _check_nchw(x, "resize input")
    oh, ow = _as_pair(size, "size")
    n, c, h, w = x.shape
    if (oh, ow) == (h, w):
        out = Tensor(x.data, requires_grad=x.requires_grad)
        record_op(out, lambda g: accumulate_grad(x, g))
        return out
    rm = _interp_matrix(oh, h, x.dtype)      # (oh, h)
    cm = _interp_matrix(ow, w, x.dtype)      # (ow, w)
    out_data = np.einsum("ih,nchw,jw->ncij", rm, x.data, cm, optimize=True)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(grad_out):
        accumulate_grad(x, np.einsum("ih,ncij,jw->nchw", rm, grad_out, cm,
                                     optimize=True))

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# normalization


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with biased batch variance and folds the
    unbiased variance into the running buffers in place (factor ``momentum``
    on the new value).  Eval mode normalizes with the running buffers.
    """
    _check_nchw(x, "batch_norm input")
    c = x.shape[1]
    for t, name in ((gamma, "gamma"), (beta, "beta")):
        if t.shape != (c,):
            raise ValidationError(f"{name} shape {t.shape} != ({c},)")
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        if m < 2:
            raise ValidationError("batch_norm training needs at least 2 samples per channel")
        mean64 = x.data.mean(axis=axes, dtype=np.float64)
        var64 = np.square(x.data.astype(np.float64) - mean64.reshape(1, c, 1, 1)) \
                  .mean(axis=axes)
        mean = mean64.astype(x.dtype)
        var = var64.astype(x.dtype)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean64.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * (var64 * m / (m - 1)).astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    maybe_check_finite(out_data, f"batch_norm2d(C={c})")
    requires = x.requires_grad or gamma.requires_grad or beta.requires_grad
    out = Tensor(out_data, requires_grad=requires)

    def backward(grad_out):
        if gamma.requires_grad:
            accumulate_grad(gamma, (grad_out * xhat).sum(axis=axes))
        if beta.requires_grad:
            accumulate_grad(beta, grad_out.sum(axis=axes))
        if not x.requires_grad:
            return
        gxhat = grad_out * gamma.data.reshape(1, c, 1, 1)
        istd = inv_std.reshape(1, c, 1, 1)
        if training:
            sum_g = gxhat.sum(axis=axes, keepdims=True)
            sum_gx = (gxhat * xhat).sum(axis=axes, keepdims=True)
            gx = istd * (gxhat - sum_g / m - xhat * sum_gx / m)
        else:
            gx = gxhat * istd
        accumulate_grad(x, gx)

    record_op(out, backward)
    return out


def group_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
                 eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over channel groups and all spatial positions."""
    _check_nchw(x, "group_norm input")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ValidationError(f"groups={groups} must divide C={c}")
    for t, name in ((gamma, "gamma"), (beta, "beta")):
        if t.shape != (c,):
            raise ValidationError(f"{name} shape {t.shape} != ({c},)")
    cg = c // groups
    m = cg * h * w
    grouped = x.data.reshape(n, groups, m)
    mean = grouped.mean(axis=2, dtype=np.float64).astype(x.dtype)
    var = grouped.var(axis=2, dtype=np.float64).astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = ((grouped - mean[:, :, None]) * inv_std[:, :, None]).reshape(x.shape)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    requires = x.requires_grad or gamma.requires_grad or beta.requires_grad
    out = Tensor(out_data, requires_grad=requires)

    def backward(grad_out):
        if gamma.requires_grad:
            accumulate_grad(gamma, (grad_out * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            accumulate_grad(beta, grad_out.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gxhat = (grad_out * gamma.data.reshape(1, c, 1, 1)).reshape(n, groups, m)
        xh = xhat.reshape(n, groups, m)
        sum_g = gxhat.sum(axis=2, keepdims=True)
        sum_gx = (gxhat * xh).sum(axis=2, keepdims=True)
        gx = inv_std[:, :, None] * (gxhat - sum_g / m - xh * sum_gx / m)
        accumulate_grad(x, gx.reshape(x.shape))

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# channel plumbing


def concat_channels(tensors) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise ValidationError("concat_channels needs at least one tensor")
    for t in tensors:
        _check_nchw(t, "concat input")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValidationError(
                f"concat shapes disagree: {t.shape} vs {ref}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1),
                 requires_grad=any(t.requires_grad for t in tensors))
    splits = [t.shape[1] for t in tensors]

    def backward(grad_out):
        start = 0
        for t, width in zip(tensors, splits):
            accumulate_grad(t, grad_out[:, start:start + width])
            start += width

    record_op(out, backward)
    return out


def channel_mean(x: Tensor) -> Tensor:
    """Mean over channels, keeping a singleton channel axis."""
    _check_nchw(x, "channel_mean input")
    return x.mean(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# losses and fixed filters


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Elementwise binary cross-entropy on logits, numerically stable.

    ``target`` may be a Tensor or ndarray; gradients flow to it only if it is
    a Tensor requiring grad.  Callers reduce the result themselves.
    """
    if not isinstance(logits, Tensor):
        raise ValidationError("bce_with_logits expects Tensor logits")
    t_tensor = target if isinstance(target, Tensor) else None
    t = target.data if t_tensor is not None else np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValidationError(
            f"target shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    requires = logits.requires_grad or (t_tensor is not None and t_tensor.requires_grad)
    out = Tensor(loss, requires_grad=requires)

    def backward(grad_out):
        if logits.requires_grad:
            accumulate_grad(logits, grad_out * (expit(z) - t))
        if t_tensor is not None and t_tensor.requires_grad:
            accumulate_grad(t_tensor, grad_out * (-z))

    record_op(out, backward)
    return out


def _laplacian_stencil(a: np.ndarray) -> np.ndarray:
    """Apply the 4-neighbour stencil to a pre-padded array (valid region).

    Taps come from LAPLACIAN_KERNEL.  The four unit neighbours are summed in
    symmetric pairs before scaling, so a constant input yields exact zeros.
    """
    side = float(LAPLACIAN_KERNEL[0, 1])
    center = float(LAPLACIAN_KERNEL[1, 1])
    up = a[..., :-2, 1:-1]
    down = a[..., 2:, 1:-1]
    left = a[..., 1:-1, :-2]
    right = a[..., 1:-1, 2:]
    mid = a[..., 1:-1, 1:-1]
    return side * ((up + down) + (left + right)) + center * mid


def laplacian2d(x: Tensor) -> Tensor:
    """Fixed Laplacian high-pass filter with reflect padding; no parameters."""
    _check_nchw(x, "laplacian input")
    out = Tensor(_laplacian_stencil(_pad_hw(x.data, 1, 1, "reflect")),
                 requires_grad=x.requires_grad)

    def backward(grad_out):
        # the stencil is symmetric, so its valid-mode adjoint is the same
        # stencil on a zero-padded gradient; then fold the reflect padding
        gp = _laplacian_stencil(_pad_hw(grad_out, 2, 2, "zeros"))
        accumulate_grad(x, _fold_pad_hw(gp, 1, 1, "reflect"))

    record_op(out, backward)
    return out
