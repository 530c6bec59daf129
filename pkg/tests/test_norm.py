"""Batch/group normalization statistics, running buffers, and modes."""

import numpy as np
import pytest

from uwsod import ops
from uwsod.errors import ValidationError
from uwsod.nn import BatchNorm2d, GroupNorm, norm_group_count
from uwsod.tensor import Tensor, use_dtype


def _direct_batch_norm(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)


class TestBatchNorm:
    def test_training_output_matches_direct_formula(self, f64, rng):
        x = rng.standard_normal((4, 6, 5, 5))
        gamma = rng.standard_normal(6) + 1.0
        beta = rng.standard_normal(6)
        rm = np.zeros(6)
        rv = np.ones(6)
        out = ops.batch_norm2d(Tensor(x), Tensor(gamma), Tensor(beta),
                               rm, rv, training=True).numpy()
        np.testing.assert_allclose(out, _direct_batch_norm(x, gamma, beta),
                                   atol=1e-9)

    def test_running_buffers_update_formula(self, f64, rng):
        x = rng.standard_normal((3, 2, 4, 4))
        rm = np.full(2, 0.5)
        rv = np.full(2, 2.0)
        ops.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         rm, rv, training=True, momentum=0.1)
        m = 3 * 4 * 4
        mean = x.mean(axis=(0, 2, 3))
        var_unbiased = x.var(axis=(0, 2, 3)) * m / (m - 1)
        np.testing.assert_allclose(rm, 0.9 * 0.5 + 0.1 * mean, atol=1e-12)
        np.testing.assert_allclose(rv, 0.9 * 2.0 + 0.1 * var_unbiased, atol=1e-12)

    def test_eval_mode_uses_running_stats(self, f64, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        rm = np.array([0.1, -0.2, 0.3])
        rv = np.array([1.5, 0.5, 2.0])
        out = ops.batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                               rm.copy(), rv.copy(), training=False).numpy()
        want = (x - rm.reshape(1, 3, 1, 1)) / np.sqrt(rv.reshape(1, 3, 1, 1) + 1e-5)
        np.testing.assert_allclose(out, want, atol=1e-12)
        # eval must not touch the buffers
        rm2, rv2 = rm.copy(), rv.copy()
        ops.batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                         rm2, rv2, training=False)
        np.testing.assert_array_equal(rm2, rm)
        np.testing.assert_array_equal(rv2, rv)

    def test_single_element_batch_rejected(self, f64):
        with pytest.raises(ValidationError):
            ops.batch_norm2d(Tensor(np.zeros((1, 2, 1, 1))),
                             Tensor(np.ones(2)), Tensor(np.zeros(2)),
                             np.zeros(2), np.ones(2), training=True)

    def test_param_shape_guard(self, f64, rng):
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        with pytest.raises(ValidationError):
            ops.batch_norm2d(x, Tensor(np.ones(4)), Tensor(np.zeros(3)),
                             np.zeros(3), np.ones(3), training=True)

    def test_module_wires_buffers(self, rng):
        bn = BatchNorm2d(4)
        names = dict(bn.named_buffers())
        assert set(names) == {"running_mean", "running_var"}
        x = Tensor(rng.standard_normal((2, 4, 3, 3)).astype(np.float32))
        bn(x)
        assert not np.array_equal(bn.running_mean, np.zeros(4))
        bn.eval()
        before = bn.running_mean.copy()
        bn(x)
        np.testing.assert_array_equal(bn.running_mean, before)


class TestGroupNorm:
    def test_statistics_per_sample_per_group(self, f64, rng):
        x = rng.standard_normal((3, 8, 4, 4))
        out = ops.group_norm2d(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)),
                               groups=4).numpy()
        grouped = out.reshape(3, 4, -1)
        assert np.abs(grouped.mean(axis=2)).max() <= 1e-9
        assert np.abs(grouped.var(axis=2) - 1.0).max() <= 1e-4

    def test_affine_applied_after_normalization(self, f64, rng):
        x = rng.standard_normal((2, 4, 3, 3))
        gamma = np.array([1.0, 2.0, 3.0, 4.0])
        beta = np.array([0.5, -0.5, 0.0, 1.0])
        plain = ops.group_norm2d(Tensor(x), Tensor(np.ones(4)),
                                 Tensor(np.zeros(4)), groups=2).numpy()
        affine = ops.group_norm2d(Tensor(x), Tensor(gamma), Tensor(beta),
                                  groups=2).numpy()
        want = gamma.reshape(1, 4, 1, 1) * plain + beta.reshape(1, 4, 1, 1)
        np.testing.assert_allclose(affine, want, atol=1e-12)

    def test_group_divisibility_guard(self, f64, rng):
        x = Tensor(rng.standard_normal((1, 6, 2, 2)))
        with pytest.raises(ValidationError):
            ops.group_norm2d(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), groups=4)
        with pytest.raises(ValidationError):
            GroupNorm(6, groups=4)

    def test_independent_of_batch_composition(self, f64, rng):
        # per-sample statistics: adding a second sample must not change the first
        a = rng.standard_normal((1, 4, 3, 3))
        b = rng.standard_normal((1, 4, 3, 3))
        gamma, beta = Tensor(np.ones(4)), Tensor(np.zeros(4))
        solo = ops.group_norm2d(Tensor(a), gamma, beta, groups=2).numpy()
        both = ops.group_norm2d(Tensor(np.concatenate([a, b])), gamma, beta,
                                groups=2).numpy()
        np.testing.assert_allclose(both[:1], solo, atol=1e-12)


def test_norm_group_count_policy():
    assert norm_group_count(1) == 1
    assert norm_group_count(4) == 1
    assert norm_group_count(8) == 8
    assert norm_group_count(12) == 1    # not divisible by 8
    assert norm_group_count(16) == 8
    assert norm_group_count(64) == 8


def test_group_norm_module_auto_groups(rng):
    with use_dtype(np.float64):
        gn = GroupNorm(16)
        assert gn.groups == 8
        gn_small = GroupNorm(6)
        assert gn_small.groups == 1
        out = gn(Tensor(rng.standard_normal((2, 16, 3, 3))))
        assert out.shape == (2, 16, 3, 3)
