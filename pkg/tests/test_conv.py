"""Convolution against a six-nested-loop reference, plus its error surface."""

import zlib

import numpy as np
import pytest

from tests._oracles import conv_reference
from uwsod import ops
from uwsod.errors import ValidationError
from uwsod.tensor import Tensor

# (cin, cout, groups, kernel, stride, pad_mode, bias) covering every shape the
# model uses: pointwise, 3x3, large anisotropic depthwise rows/columns, grouped,
# and strided downsampling under all three padding modes.
CASES = []
for pad in ("zeros", "reflect", "replicate"):
    CASES += [
        (3, 4, 1, 3, 1, pad, True),
        (2, 2, 1, 3, 2, pad, True),
        (4, 4, 4, 3, 1, pad, False),
        (4, 6, 2, 3, 1, pad, True),
        (3, 5, 1, 1, 1, pad, True),
        (2, 2, 2, (1, 5), 1, pad, True),
        (2, 2, 2, (5, 1), 1, pad, False),
        (1, 3, 1, 5, 1, pad, True),
        (2, 4, 1, (3, 5), 1, pad, False),
        (4, 2, 2, 1, 2, pad, True),
        (2, 2, 1, (1, 7), 1, pad, True),
        (3, 3, 3, 3, 2, pad, False),
        (1, 1, 1, 7, 1, pad, True),
        (5, 5, 5, (7, 1), 1, pad, False),
        (2, 6, 2, 3, 2, pad, True),
        (6, 4, 2, (5, 3), 1, pad, True),
        (3, 4, 1, 3, (2, 1), pad, True),
        (2, 2, 1, 3, (1, 2), pad, False),
    ]

assert len(CASES) >= 50


@pytest.mark.parametrize("cin,cout,groups,kernel,stride,pad,bias", CASES)
def test_matches_loop_reference(cin, cout, groups, kernel, stride, pad, bias):
    stable = zlib.crc32(repr((cin, cout, groups, kernel, stride, pad,
                              bias)).encode())
    rng = np.random.default_rng(stable)
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    x = rng.standard_normal((2, cin, 7, 8))
    w = rng.standard_normal((cout, cin // groups, kh, kw))
    b = rng.standard_normal(cout) if bias else None
    got = ops.conv2d(Tensor(x), Tensor(w), None if b is None else Tensor(b),
                     stride=stride, groups=groups, pad_mode=pad).numpy()
    want = conv_reference(x, w, b, stride=stride, groups=groups, pad_mode=pad)
    assert got.shape == want.shape
    assert np.abs(got - want).max() <= 1e-6


def test_output_extents_same_padding(rng):
    x = Tensor(rng.standard_normal((1, 2, 12, 16)))
    w = Tensor(rng.standard_normal((3, 2, 5, 3)))
    assert ops.conv2d(x, w).shape == (1, 3, 12, 16)
    assert ops.conv2d(x, w, stride=2).shape == (1, 3, 6, 8)
    assert ops.conv2d(x, w, stride=4).shape == (1, 3, 3, 4)


def test_forward_deterministic(rng):
    x = Tensor(rng.standard_normal((1, 3, 6, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    a = ops.conv2d(x, w).numpy().copy()
    b = ops.conv2d(x, w).numpy().copy()
    np.testing.assert_array_equal(a, b)


def test_bias_gradient_closed_form(rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(3, dtype=np.float64), requires_grad=True)
    out = ops.conv2d(x, w, b)
    seed = rng.standard_normal(out.shape)
    out.backward(seed)
    np.testing.assert_allclose(b.grad, seed.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_weight_gradient_via_loop(rng):
    # d out / d w[co, ci, di, dj] is the correlation of grad with the input
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    xt = Tensor(x)
    wt = Tensor(w, requires_grad=True)
    out = ops.conv2d(xt, wt, pad_mode="zeros")
    seed = rng.standard_normal(out.shape)
    out.backward(seed)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    want = np.zeros_like(w)
    for co in range(2):
        for ci in range(2):
            for di in range(3):
                for dj in range(3):
                    want[co, ci, di, dj] = np.sum(
                        seed[:, co] * xp[:, ci, di:di + 5, dj:dj + 5])
    np.testing.assert_allclose(wt.grad, want, rtol=1e-10)


class TestValidation:
    def test_even_kernel_rejected(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        with pytest.raises(ValidationError):
            ops.conv2d(x, Tensor(rng.standard_normal((2, 2, 2, 2))))
        with pytest.raises(ValidationError):
            ops.conv2d(x, Tensor(rng.standard_normal((2, 2, 3, 4))))

    def test_group_divisibility(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        w = Tensor(rng.standard_normal((4, 2, 3, 3)))
        with pytest.raises(ValidationError):
            ops.conv2d(x, w, groups=3)

    def test_weight_channel_mismatch(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        with pytest.raises(ValidationError):
            ops.conv2d(x, w)

    def test_bias_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        with pytest.raises(ValidationError):
            ops.conv2d(x, w, Tensor(np.zeros(2)))

    def test_input_rank(self, rng):
        with pytest.raises(ValidationError):
            ops.conv2d(Tensor(np.zeros((2, 4, 4))),
                       Tensor(rng.standard_normal((2, 2, 3, 3))))

    def test_unknown_pad_mode(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((2, 2, 3, 3)))
        with pytest.raises(ValidationError):
            ops.conv2d(x, w, pad_mode="wrap")
