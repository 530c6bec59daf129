"""Built-in invariant battery behind the ``selfcheck`` CLI command.

Every check is self-contained: brute-force loop oracles live here, written
independently of the vectorized implementations they verify.  All numeric
checks run in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .gradcheck import finite_difference_check
from .losses import boundary_loss, scm_loss, structure_loss
from .nn import BatchNorm2d, Conv2d, GroupNorm, Parameter
from .optim import AdamW, EmaTracker, clip_global_norm, cosine_lr
from .tensor import Tensor, clear_tape, use_dtype


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


# ---------------------------------------------------------------------------
# loop oracles


def conv_loop(x, w, bias, stride, groups, pad_mode):
    """Six-nested-loop grouped cross-correlation with same-size padding."""
    n, cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    mode = {"zeros": "constant", "reflect": "reflect", "replicate": "edge"}[pad_mode]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=mode)
    hs = (h + 2 * ph - kh) // stride + 1
    ws = (wd + 2 * pw - kw) // stride + 1
    out = np.zeros((n, cout, hs, ws), dtype=x.dtype)
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
                                acc += (xp[b, g * cing + ci,
                                           i * stride + di, j * stride + dj]
                                        * w[co, ci, di, dj])
                    out[b, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def pool_loop(x, kind, k, pad_mode="replicate"):
    mode = {"zeros": "constant", "reflect": "reflect", "replicate": "edge"}[pad_mode]
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode=mode)
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    win = xp[b, ch, i:i + k, j:j + k]
                    out[b, ch, i, j] = win.max() if kind == "max" else win.mean()
    return out


# ---------------------------------------------------------------------------
# checks


def _check_conv_oracle(rng) -> CheckResult:
    worst = 0.0
    cases = [
        (2, 3, 4, 1, 3, 3, 1, "zeros"),
        (1, 3, 4, 1, 3, 3, 1, "reflect"),
        (1, 4, 4, 4, 3, 3, 1, "replicate"),   # depthwise
        (1, 4, 4, 4, 1, 7, 1, "replicate"),   # anisotropic row
        (1, 4, 4, 4, 7, 1, 1, "replicate"),   # anisotropic col
        (1, 4, 8, 1, 1, 1, 1, "zeros"),       # pointwise
        (1, 3, 4, 1, 3, 3, 2, "zeros"),       # strided
        (1, 4, 6, 2, 3, 3, 1, "zeros"),       # grouped
    ]
    for n, cin, cout, groups, kh, kw, stride, pad in cases:
        x = rng.standard_normal((n, cin, 6, 6))
        w = rng.standard_normal((cout, cin // groups, kh, kw))
        b = rng.standard_normal(cout)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                         groups=groups, pad_mode=pad).numpy()
        want = conv_loop(x, w, b, stride, groups, pad)
        worst = max(worst, float(np.abs(got - want).max()))
    ok = worst <= 1e-6
    return CheckResult("conv2d vs loop oracle", ok, f"max abs err {worst:.2e}")


def _check_separable(rng) -> CheckResult:
    x = rng.standard_normal((1, 4, 9, 9))
    k = 7
    row_w = rng.standard_normal((4, 1, 1, k))
    col_w = rng.standard_normal((4, 1, k, 1))
    got = ops.conv2d(ops.conv2d(Tensor(x), Tensor(row_w), None, groups=4,
                                pad_mode="replicate"),
                     Tensor(col_w), None, groups=4, pad_mode="replicate").numpy()
    mid = conv_loop(x, row_w, None, 1, 4, "replicate")
    want = conv_loop(mid, col_w, None, 1, 4, "replicate")
    err = float(np.abs(got - want).max())
    return CheckResult("separable row/col composition", err <= 1e-6,
                       f"max abs err {err:.2e}")


def _check_pool_oracle(rng) -> CheckResult:
    worst = 0.0
    for kind in ("max", "avg"):
        for k in (3, 5):
            x = rng.standard_normal((1, 2, 6, 6))
            fn = ops.max_pool2d if kind == "max" else ops.avg_pool2d
            got = fn(Tensor(x), k).numpy()
            want = pool_loop(x, kind, k)
            worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult("pooling vs sliding-window oracle", worst <= 1e-6,
                       f"max abs err {worst:.2e}")


def _check_pool_constant() -> CheckResult:
    c = np.float32(0.1234567)
    x = np.full((1, 1, 8, 8), c, dtype=np.float32)
    out = ops.avg_pool2d(Tensor(x), 5).numpy()
    ok = np.array_equal(out, x)
    return CheckResult("avg-pool replicate keeps constants bit-exact", ok,
                       "exact" if ok else "drifted")


def _check_resize(rng) -> CheckResult:
    x = rng.standard_normal((1, 2, 5, 7))
    same = ops.resize_bilinear(Tensor(x), (5, 7)).numpy()
    if not np.array_equal(same, x):
        return CheckResult("bilinear resize", False, "identity resize not exact")
    const = np.full((1, 1, 3, 3), 0.7)
    up = ops.resize_bilinear(Tensor(const), (9, 11)).numpy()
    if abs(float(up.max() - up.min())) > 1e-12:
        return CheckResult("bilinear resize", False, "constant not preserved")
    # closed-form check on a 2x2 -> 4x4 upsample
    src = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    got = ops.resize_bilinear(Tensor(src), (4, 4)).numpy()[0, 0]
    want = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            sy = min(max((i + 0.5) * 0.5 - 0.5, 0.0), 1.0)
            sx = min(max((j + 0.5) * 0.5 - 0.5, 0.0), 1.0)
            y0, x0 = int(sy), int(sx)
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            fy, fx = sy - y0, sx - x0
            v0 = src[0, 0, y0, x0] * (1 - fx) + src[0, 0, y0, x1] * fx
            v1 = src[0, 0, y1, x0] * (1 - fx) + src[0, 0, y1, x1] * fx
            want[i, j] = v0 * (1 - fy) + v1 * fy
    err = float(np.abs(got - want).max())
    return CheckResult("bilinear resize", err <= 1e-12,
                       f"closed-form err {err:.2e}")


def _check_laplacian() -> CheckResult:
    const = np.full((1, 3, 6, 6), np.float32(0.3344556))
    out = ops.laplacian2d(Tensor(const)).numpy()
    if not np.all(out == 0.0):
        return CheckResult("laplacian invariants", False,
                           "constant field not exactly annihilated")
    ramp = np.tile(np.arange(7, dtype=np.float64), (7, 1)).reshape(1, 1, 7, 7)
    out = ops.laplacian2d(Tensor(ramp)).numpy()[0, 0]
    if np.abs(out[1:-1, 1:-1]).max() > 1e-12:
        return CheckResult("laplacian invariants", False,
                           "linear ramp interior not annihilated")
    spike = np.zeros((1, 1, 5, 5))
    spike[0, 0, 2, 2] = 1.0
    out = ops.laplacian2d(Tensor(spike)).numpy()[0, 0]
    want = np.zeros((5, 5))
    want[2, 2] = -4.0
    want[1, 2] = want[3, 2] = want[2, 1] = want[2, 3] = 1.0
    ok = np.array_equal(out, want)
    return CheckResult("laplacian invariants", ok,
                       "constant/ramp/impulse all exact" if ok else "impulse stamp wrong")


def _check_norm_stats(rng) -> CheckResult:
    x = rng.standard_normal((4, 8, 5, 5))
    bn = BatchNorm2d(8)
    out = bn(Tensor(x)).numpy()
    m = np.abs(out.mean(axis=(0, 2, 3))).max()
    v = np.abs(out.var(axis=(0, 2, 3)) - 1.0).max()
    gn = GroupNorm(8, groups=4)
    gout = gn(Tensor(x)).numpy().reshape(4, 4, -1)
    gm = np.abs(gout.mean(axis=2)).max()
    gv = np.abs(gout.var(axis=2) - 1.0).max()
    worst = max(m, v, gm, gv)
    return CheckResult("normalization statistics 0/1", worst <= 1e-4,
                       f"max deviation {worst:.2e}")


def _gradcheck_families(probes: int) -> list[CheckResult]:
    results = []
    with use_dtype(np.float64):
        rng = np.random.default_rng(11)

        def family(name, make):
            fn, params = make()
            err = finite_difference_check(fn, params, probes=probes,
                                          rng=np.random.default_rng(5))
            results.append(CheckResult(
                f"gradcheck {name} ({probes} probes)", err < 1e-3,
                f"max rel err {err:.2e}"))

        def make_elementwise():
            a = Tensor(rng.standard_normal((2, 3, 4, 4)) + 2.5, requires_grad=True)
            b = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)

            def fn():
                return ((a * b + a / (b * b + 4.0) - b).relu().sigmoid()
                        + (a.abs() + 0.1).log().exp() * 0.01).mean()
            return fn, [a, b]

        def make_conv():
            x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
            w = Tensor(0.3 * rng.standard_normal((6, 4, 3, 3)), requires_grad=True)
            b = Tensor(rng.standard_normal(6), requires_grad=True)

            def fn():
                return ops.conv2d(x, w, b, pad_mode="reflect").sigmoid().mean()
            return fn, [x, w, b]

        def make_pool():
            x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
            mixer = Tensor(rng.standard_normal((1, 3, 6, 6)))

            def fn():
                return (ops.avg_pool2d(ops.max_pool2d(x, 3), 3) * mixer).sum() * 0.1
            return fn, [x]

        def make_resize():
            x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)

            def fn():
                big = ops.resize_bilinear(x, (7, 9))
                return (big * big).mean()
            return fn, [x]

        def make_norm():
            x = Tensor(rng.standard_normal((3, 8, 4, 4)), requires_grad=True)
            bn = BatchNorm2d(8)
            gn = GroupNorm(8)

            def fn():
                return (bn(x).sigmoid() + gn(x)).mean()
            return fn, [x, bn.gamma, bn.beta, gn.gamma, gn.beta]

        def make_loss():
            logits = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
            target = Tensor((rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64))

            def fn():
                return (structure_loss(logits, target)
                        + boundary_loss(logits, target)
                        + scm_loss(logits, target * 0.5))
            return fn, [logits]

        family("elementwise", make_elementwise)
        family("conv", make_conv)
        family("pool", make_pool)
        family("resize", make_resize)
        family("norm", make_norm)
        family("losses", make_loss)
    return results


def _check_loss_identities() -> CheckResult:
    with use_dtype(np.float64):
        logits = Tensor(np.zeros((1, 1, 8, 8), dtype=np.float64))
        target = Tensor(np.ones((1, 1, 8, 8), dtype=np.float64))
        got = structure_loss(logits, target).item()
        want = math.log(2.0) + 1.0 / 3.0
        if abs(got - want) > 1e-6:
            return CheckResult("loss identities", False,
                               f"structure loss {got:.8f} != ln2+1/3")
        half = Tensor(np.full((1, 1, 4, 4), 0.5))
        if abs(scm_loss(Tensor(np.zeros((1, 1, 4, 4))), half).item()
               - math.log(2.0)) > 1e-9:
            return CheckResult("loss identities", False, "scm ln2 identity failed")
    return CheckResult("loss identities", True, "closed forms match")


def _check_optimizer() -> CheckResult:
    if abs(cosine_lr(0, 100) - 1e-4) > 1e-18 or abs(cosine_lr(100, 100) - 1e-6) > 1e-18:
        return CheckResult("optimizer arithmetic", False, "cosine endpoints off")
    with use_dtype(np.float64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("p", p)], lr=0.1, weight_decay=0.01)
        theta, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 0.5
            p.grad = np.array([g])
            opt.step()
            theta *= 1.0 - 0.1 * 0.01
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        if abs(p.data[0] - theta) > 1e-12:
            return CheckResult("optimizer arithmetic", False,
                               f"adamw scalar mismatch {p.data[0]!r} vs {theta!r}")
        q = Parameter(np.array([3.0, 4.0]), dtype=np.float64)
        q.grad = np.array([3.0, 4.0])
        clip_global_norm([q], 1.0)
        if abs(math.hypot(*q.grad) - 1.0) > 1e-6:
            return CheckResult("optimizer arithmetic", False, "clip norm wrong")
        s = Parameter(np.array([1.0]), dtype=np.float64)
        ema = EmaTracker([("s", s)], decay=0.999)
        ema.shadows["s"][0] = 0.0
        for _ in range(3):
            ema.update()
        if abs(ema.shadows["s"][0] - (1 - 0.999 ** 3)) > 1e-12:
            return CheckResult("optimizer arithmetic", False, "ema 3-step value wrong")
    return CheckResult("optimizer arithmetic", True, "adamw/cosine/clip/ema match")


def _check_determinism() -> CheckResult:
    rng_a = np.random.default_rng(3)
    conv_a = Conv2d(3, 4, 3, rng=np.random.default_rng(9))
    x = rng_a.standard_normal((1, 3, 8, 8)).astype(np.float32)
    y1 = conv_a(Tensor(x)).numpy().copy()
    y2 = conv_a(Tensor(x)).numpy().copy()
    ok = np.array_equal(y1, y2)
    return CheckResult("forward determinism", ok,
                       "bit-identical" if ok else "outputs differ")


def run_selfcheck(probes: int = 20) -> list[CheckResult]:
    with use_dtype(np.float64):
        rng = np.random.default_rng(1234)
        results = [
            _check_conv_oracle(rng),
            _check_separable(rng),
            _check_pool_oracle(rng),
            _check_pool_constant(),
            _check_resize(rng),
            _check_laplacian(),
            _check_norm_stats(rng),
        ]
    clear_tape()    # norm checks route through Parameters and leave stale nodes
    results.extend(_gradcheck_families(probes))
    results.append(_check_loss_identities())
    results.append(_check_optimizer())
    results.append(_check_determinism())
    clear_tape()
    return results


def format_report(results) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        lines.append(f"{r.name:<{width}}  {mark}  {r.detail}")
    passed = sum(r.ok for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
