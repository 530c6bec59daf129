"""Brute-force reference implementations shared across test modules.

Everything here is written with explicit Python loops and basic numpy
indexing only, independently of the vectorized library code it verifies.
"""

import math

import numpy as np

_PAD_MODES = {"zeros": "constant", "reflect": "reflect", "replicate": "edge"}


def pad_nchw(x: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=_PAD_MODES[mode])


def conv_reference(x, w, bias=None, stride=1, groups=1, pad_mode="zeros"):
    """Grouped same-padding cross-correlation, six nested loops."""
    if isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = stride
    n, cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = pad_nchw(x, ph, pw, pad_mode)
    hs = (h + 2 * ph - kh) // sh + 1
    ws = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, hs, ws), dtype=np.float64)
    cpg = cout // groups
    for b in range(n):
        for co in range(cout):
            g = co // cpg
            for i in range(hs):
                for j in range(ws):
                    acc = 0.0
                    for ci in range(cing):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += float(xp[b, g * cing + ci,
                                                i * sh + di, j * sw + dj]) \
                                    * float(w[co, ci, di, dj])
                    if bias is not None:
                        acc += float(bias[co])
                    out[b, co, i, j] = acc
    return out


def pool_reference(x, kind, kernel, stride=1, pad_mode="replicate"):
    """Sliding max/mean with same padding."""
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    if isinstance(stride, int):
        stride = (stride, stride)
    kh, kw = kernel
    sh, sw = stride
    n, c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = pad_nchw(x, ph, pw, pad_mode)
    hs = (h + 2 * ph - kh) // sh + 1
    ws = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, c, hs, ws), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for i in range(hs):
                for j in range(ws):
                    win = xp[b, ch, i * sh:i * sh + kh, j * sw:j * sw + kw]
                    out[b, ch, i, j] = win.max() if kind == "max" else win.mean()
    return out


def max_pool_grad_reference(x, kernel, grad_out, pad_mode="replicate"):
    """Input gradient of max pooling: each window feeds its first row-major
    maximum; padded winners fold back to the interior cell they mirror."""
    k = kernel
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = pad_nchw(x, p, p, pad_mode)

    def src(j, size):
        j -= p
        if pad_mode == "replicate":
            return min(max(j, 0), size - 1)
        if pad_mode == "reflect":
            return -j if j < 0 else (2 * size - 2 - j if j >= size else j)
        return j   # zeros: padded cells receive nothing; handled by caller

    gx = np.zeros_like(x, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    win = xp[b, ch, i:i + k, j:j + k]
                    flat = int(np.argmax(win))
                    di, dj = divmod(flat, k)
                    si, sj = src(i + di, h), src(j + dj, w)
                    if 0 <= si < h and 0 <= sj < w:
                        gx[b, ch, si, sj] += grad_out[b, ch, i, j]
    return gx


def resize_reference(x, out_h, out_w):
    """Half-pixel bilinear interpolation with edge clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = x[:, :, y0, x0] * (1 - fx) + x[:, :, y0, x1] * fx
            bot = x[:, :, y1, x0] * (1 - fx) + x[:, :, y1, x1] * fx
            out[:, :, i, j] = top * (1 - fy) + bot * fy
    return out


def bce_reference(z, t):
    """Elementwise binary cross-entropy on logits via direct probabilities.

    Only valid where sigmoid does not saturate to exactly 0/1 in float64.
    """
    s = 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))
    return -(t * np.log(s) + (1.0 - t) * np.log(1.0 - s))


def morph_gradient_reference(mask2d):
    """3x3 dilation minus erosion with edge-clamped windows, binarized."""
    h, w = mask2d.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            lo_i, hi_i = max(i - 1, 0), min(i + 1, h - 1)
            lo_j, hi_j = max(j - 1, 0), min(j + 1, w - 1)
            win = mask2d[lo_i:hi_i + 1, lo_j:hi_j + 1]
            out[i, j] = 1.0 if win.max() - win.min() > 0 else 0.0
    return out


def counts_reference(pred2d, mask2d):
    """tp/fp/fn per threshold k/255 with >= semantics, by direct enumeration."""
    tp = np.zeros(256, dtype=np.int64)
    fp = np.zeros(256, dtype=np.int64)
    fn = np.zeros(256, dtype=np.int64)
    for k in range(256):
        t = k / 255.0
        pos = np.asarray(pred2d, dtype=np.float64) >= t
        gt = np.asarray(mask2d) > 0.5
        tp[k] = int(np.sum(pos & gt))
        fp[k] = int(np.sum(pos & ~gt))
        fn[k] = int(np.sum(~pos & gt))
    return tp, fp, fn
