"""AdamW, cosine schedule, gradient clipping, and EMA tracking."""

import math

import numpy as np
import pytest

from uwsod.errors import NumericError, ValidationError
from uwsod.nn import Parameter
from uwsod.optim import AdamW, EmaTracker, clip_global_norm, cosine_lr
from uwsod.tensor import use_dtype


def _scalar_adamw_reference(theta0, grads, lr, beta1=0.9, beta2=0.999,
                            eps=1e-8, wd=1e-2):
    """Textbook scalar recursion, plain Python floats."""
    theta, m, v = theta0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        theta *= 1.0 - lr * wd
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


class TestAdamW:
    def test_ten_steps_match_scalar_recursion(self, f64):
        grads = [0.3, -1.2, 0.8, 0.05, -0.4, 2.0, -0.7, 0.9, -0.1, 1.5]
        p = Parameter(np.array([0.5]), dtype=np.float64)
        opt = AdamW([("w", p)], lr=1e-2)
        for g in grads:
            p.grad = np.array([g])
            opt.step()
        want = _scalar_adamw_reference(0.5, grads, 1e-2)
        assert p.data[0] == pytest.approx(want, abs=1e-12)
        assert opt.step_count == 10

    def test_per_call_learning_rate_override(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("w", p)], lr=1e-3)
        p.grad = np.array([1.0])
        opt.step(lr=0.1)
        # first step moves by ~lr regardless of gradient scale
        moved = 1.0 * (1.0 - 0.1 * 1e-2) - 0.1 * (1.0 / (1.0 + 1e-8))
        assert p.data[0] == pytest.approx(moved, abs=1e-12)

    def test_decay_applies_to_every_parameter(self, f64):
        # zero gradient: only the multiplicative shrink moves the value
        p = Parameter(np.array([2.0]), dtype=np.float64)
        opt = AdamW([("w", p)], lr=0.5, weight_decay=0.1)
        p.grad = np.array([0.0])
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1.0 - 0.5 * 0.1), abs=1e-12)

    def test_missing_gradient_rejected(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("w", p)])
        with pytest.raises(ValidationError):
            opt.step()

    def test_non_finite_gradient_rejected(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("w", p)])
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError):
            opt.step()

    def test_guard_runs_before_any_state_change(self, f64):
        a = Parameter(np.array([1.0]), dtype=np.float64)
        b = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("a", a), ("b", b)], lr=0.1)
        a.grad = np.array([1.0])
        b.grad = np.array([np.inf])
        with pytest.raises(NumericError):
            opt.step()
        assert a.data[0] == 1.0 and opt.step_count == 0

    def test_zero_grad_clears_all(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("w", p)])
        p.grad = np.array([1.0])
        opt.zero_grad()
        assert p.grad is None

    def test_empty_parameter_list_rejected(self):
        with pytest.raises(ValidationError):
            AdamW([])

    def test_nonpositive_lr_rejected(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamW([("w", p)])
        p.grad = np.array([0.0])
        with pytest.raises(ValidationError):
            opt.step(lr=0.0)


class TestCosineSchedule:
    def test_endpoints_exact(self):
        assert cosine_lr(0, 100, lr_max=1e-3, lr_min=1e-5) == 1e-3
        assert cosine_lr(100, 100, lr_max=1e-3, lr_min=1e-5) == pytest.approx(
            1e-5, abs=1e-20)

    def test_midpoint_is_mean(self):
        got = cosine_lr(50, 100, lr_max=1e-3, lr_min=1e-5)
        assert got == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-12)

    def test_monotone_decreasing(self):
        vals = [cosine_lr(s, 40) for s in range(41)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_step_bounds_enforced(self):
        with pytest.raises(ValidationError):
            cosine_lr(-1, 10)
        with pytest.raises(ValidationError):
            cosine_lr(11, 10)
        with pytest.raises(ValidationError):
            cosine_lr(0, 0)


class TestClipGlobalNorm:
    def test_returns_pre_clip_norm_and_scales(self, f64):
        a = Parameter(np.array([3.0]), dtype=np.float64)
        b = Parameter(np.array([4.0]), dtype=np.float64)
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        norm = clip_global_norm([a, b], max_norm=1.0)
        assert norm == pytest.approx(5.0, abs=1e-12)
        assert a.grad[0] == pytest.approx(0.6, abs=1e-12)
        assert b.grad[0] == pytest.approx(0.8, abs=1e-12)

    def test_below_threshold_untouched(self, f64):
        a = Parameter(np.array([1.0]), dtype=np.float64)
        a.grad = np.array([0.5])
        norm = clip_global_norm([a], max_norm=1.0)
        assert norm == pytest.approx(0.5)
        assert a.grad[0] == 0.5

    def test_post_clip_norm_at_most_max(self, f64, rng):
        params = []
        for _ in range(5):
            p = Parameter(rng.standard_normal(7), dtype=np.float64)
            p.grad = rng.standard_normal(7) * 10.0
            params.append(p)
        clip_global_norm(params, max_norm=1.0)
        total = sum(float(np.sum(p.grad ** 2)) for p in params)
        assert math.sqrt(total) <= 1.0 + 1e-6

    def test_missing_grads_skipped(self, f64):
        a = Parameter(np.array([1.0]), dtype=np.float64)
        b = Parameter(np.array([1.0]), dtype=np.float64)
        a.grad = np.array([2.0])
        assert clip_global_norm([a, b], max_norm=10.0) == pytest.approx(2.0)

    def test_non_finite_norm_rejected(self, f64):
        a = Parameter(np.array([1.0]), dtype=np.float64)
        a.grad = np.array([np.inf])
        with pytest.raises(NumericError):
            clip_global_norm([a])

    def test_nonpositive_max_norm_rejected(self):
        with pytest.raises(ValidationError):
            clip_global_norm([], max_norm=0.0)


class TestEmaTracker:
    def test_three_updates_closed_form(self, f64):
        p = Parameter(np.array([0.0]), dtype=np.float64)
        ema = EmaTracker([("w", p)], decay=0.9)
        for _ in range(3):
            p.data[0] = 1.0
            ema.update()
        # shadow after k updates toward a constant 1: 1 - decay^k
        assert ema.shadows["w"][0] == pytest.approx(1.0 - 0.9 ** 3, abs=1e-12)

    def test_shadows_start_as_copies(self, f64):
        p = Parameter(np.array([2.0]), dtype=np.float64)
        ema = EmaTracker([("w", p)])
        p.data[0] = 5.0
        assert ema.shadows["w"][0] == 2.0

    def test_applied_swaps_and_restores(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        ema = EmaTracker([("w", p)], decay=0.5)
        p.data[0] = 3.0
        ema.update()                      # shadow = 2.0
        class Box:
            pass
        with ema.applied(Box()) as _:
            assert p.data[0] == 2.0
        assert p.data[0] == 3.0

    def test_applied_restores_after_exception(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        ema = EmaTracker([("w", p)], decay=0.5)
        p.data[0] = 7.0
        with pytest.raises(RuntimeError):
            with ema.applied(object()):
                raise RuntimeError("boom")
        assert p.data[0] == 7.0

    def test_decay_bounds(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        with pytest.raises(ValidationError):
            EmaTracker([("w", p)], decay=1.0)
        with pytest.raises(ValidationError):
            EmaTracker([("w", p)], decay=-0.1)
