"""MAE, threshold-sweep PR curves, and max F-measure against enumeration."""

import numpy as np
import pytest

from uwsod.errors import ValidationError
from uwsod.metrics import (EvalRecord, THRESHOLDS, eval_record, max_f, mae,
                           mean_mae, pr_curve, write_pr_csv, write_summary_csv)
from tests._oracles import counts_reference


class TestMae:
    def test_direct_formula(self, rng):
        pred = rng.uniform(size=(16, 16))
        mask = (rng.uniform(size=(16, 16)) > 0.5).astype(np.float64)
        assert mae(pred, mask) == pytest.approx(
            float(np.abs(pred - mask).mean()), abs=1e-12)

    def test_perfect_prediction(self):
        mask = np.eye(8)
        assert mae(mask, mask) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            mae(np.zeros((4, 4)), np.zeros((4, 5)))


class TestEvalRecordCounts:
    def test_matches_enumeration_random(self, rng):
        pred = rng.uniform(size=(12, 12))
        mask = (rng.uniform(size=(12, 12)) > 0.5).astype(np.float64)
        rec = eval_record(pred, mask)
        tp, fp, fn = counts_reference(pred, mask)
        np.testing.assert_array_equal(rec.tp, tp)
        np.testing.assert_array_equal(rec.fp, fp)
        np.testing.assert_array_equal(rec.fn, fn)

    def test_matches_enumeration_on_grid_values(self, rng):
        # values exactly on thresholds k/255 exercise the >= boundary
        pred = rng.integers(0, 256, size=(10, 10)) / 255.0
        mask = (rng.uniform(size=(10, 10)) > 0.4).astype(np.float64)
        rec = eval_record(pred, mask)
        tp, fp, fn = counts_reference(pred, mask)
        np.testing.assert_array_equal(rec.tp, tp)
        np.testing.assert_array_equal(rec.fp, fp)
        np.testing.assert_array_equal(rec.fn, fn)

    def test_threshold_zero_admits_everything(self, rng):
        pred = rng.uniform(size=(8, 8))
        mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
        rec = eval_record(pred, mask)
        assert rec.tp[0] == int(mask.sum())
        assert rec.fp[0] == int((1 - mask).sum())
        assert rec.fn[0] == 0

    def test_counts_are_monotone_in_threshold(self, rng):
        pred = rng.uniform(size=(20, 20))
        mask = (rng.uniform(size=(20, 20)) > 0.5).astype(np.float64)
        rec = eval_record(pred, mask)
        assert np.all(np.diff(rec.tp) <= 0)
        assert np.all(np.diff(rec.fp) <= 0)
        assert np.all(np.diff(rec.fn) >= 0)
        np.testing.assert_array_equal(rec.tp + rec.fn,
                                      np.full(256, int(mask.sum())))

    def test_prediction_exactly_one_survives_every_threshold(self):
        pred = np.ones((4, 4))
        mask = np.ones((4, 4))
        rec = eval_record(pred, mask)
        np.testing.assert_array_equal(rec.tp, np.full(256, 16))
        np.testing.assert_array_equal(rec.fn, np.zeros(256))

    def test_out_of_range_prediction_rejected(self):
        with pytest.raises(ValidationError):
            eval_record(np.full((2, 2), 1.5), np.ones((2, 2)))

    def test_non_binary_mask_rejected(self):
        with pytest.raises(ValidationError):
            eval_record(np.zeros((2, 2)), np.full((2, 2), 0.5))


class TestPrCurveAndMaxF:
    def test_perfect_binary_prediction_scores_one(self):
        mask = np.zeros((8, 8))
        mask[2:6, 2:6] = 1.0
        rec = eval_record(mask, mask)
        assert max_f([rec]) == pytest.approx(1.0, abs=1e-12)

    def test_closed_form_from_pinned_counts(self):
        # constant counts: P = 4/5, R = 1/2 at every threshold;
        # F = 1.3*P*R / (0.3*P + R) = 0.52/0.74
        rec = EvalRecord(mae=0.0, tp=np.full(256, 4), fp=np.full(256, 1),
                         fn=np.full(256, 4))
        got = max_f([rec])
        assert got == pytest.approx(0.52 / 0.74, abs=1e-12)

    def test_empty_prediction_convention(self):
        # all-zero prediction on a non-empty mask: at t=0 everything passes
        mask = np.zeros((4, 4))
        mask[0, 0] = 1.0
        rec = eval_record(np.zeros((4, 4)), mask)
        p, r = pr_curve([rec])
        assert p[0] == pytest.approx(1.0 / 16.0)
        assert r[0] == 1.0
        # above t=0 nothing passes: empty-denominator conventions kick in
        assert np.all(p[1:] == 1.0)
        assert np.all(r[1:] == 0.0)

    def test_micro_pools_counts_before_ratios(self):
        a = EvalRecord(mae=0.0, tp=np.full(256, 10), fp=np.full(256, 0),
                       fn=np.full(256, 0))
        b = EvalRecord(mae=0.0, tp=np.full(256, 0), fp=np.full(256, 10),
                       fn=np.full(256, 10))
        p_micro, r_micro = pr_curve([a, b], average="micro")
        p_macro, r_macro = pr_curve([a, b], average="macro")
        assert p_micro[0] == pytest.approx(0.5)       # 10/20 pooled
        assert r_micro[0] == pytest.approx(0.5)
        assert p_macro[0] == pytest.approx(0.5)       # mean(1, 0)
        # macro recall averages per-image conventions: (1 + 0)/2
        assert r_macro[0] == pytest.approx(0.5)

    def test_record_order_invariance(self, rng):
        recs = []
        for _ in range(4):
            pred = rng.uniform(size=(8, 8))
            mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
            recs.append(eval_record(pred, mask))
        assert max_f(recs) == pytest.approx(max_f(recs[::-1]), abs=1e-15)
        assert mean_mae(recs) == pytest.approx(mean_mae(recs[::-1]), abs=1e-15)

    def test_degenerate_all_empty(self):
        # empty mask and empty prediction: P = R = 1 by convention
        rec = eval_record(np.zeros((4, 4)), np.zeros((4, 4)))
        p, r = pr_curve([rec])
        assert np.all(p[1:] == 1.0) and np.all(r == 1.0)
        assert max_f([rec]) == pytest.approx(1.0)

    def test_empty_record_list_rejected(self):
        with pytest.raises(ValidationError):
            pr_curve([])
        with pytest.raises(ValidationError):
            mean_mae([])
        with pytest.raises(ValidationError):
            pr_curve([EvalRecord(0.0, np.zeros(256, np.int64),
                                 np.zeros(256, np.int64),
                                 np.zeros(256, np.int64))], average="median")


class TestCsvWriters:
    def test_pr_csv_layout(self, tmp_path, rng):
        pred = rng.uniform(size=(8, 8))
        mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
        p, r = pr_curve([eval_record(pred, mask)])
        path = tmp_path / "pr.csv"
        write_pr_csv(path, p, r, config={"seed": 1, "image_size": 64})
        lines = path.read_text().splitlines()
        assert lines[0] == "# image_size = 64"
        assert lines[1] == "# seed = 1"
        assert lines[2] == "threshold,precision,recall"
        assert len(lines) == 3 + 256
        t0, p0, r0 = map(float, lines[3].split(","))
        assert t0 == 0.0 and p0 == pytest.approx(p[0], abs=1e-9)
        t_last = float(lines[-1].split(",")[0])
        assert t_last == pytest.approx(1.0)

    def test_summary_csv_layout(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary_csv(path, 0.125, 0.875)
        lines = path.read_text().splitlines()
        assert lines == ["mae,maxF", "0.125000000,0.875000000"]
