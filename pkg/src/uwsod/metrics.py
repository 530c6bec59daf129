"""Saliency evaluation: MAE, 256-threshold PR curves, max F-measure.

Thresholds are t_k = k/255 for k = 0..255; a pixel counts as positive at
threshold k iff its predicted value is >= t_k.  Counts are pooled across the
dataset before computing precision/recall (micro-averaging) by default;
per-image averaging (macro) is available as an option.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

THRESHOLDS = np.arange(256) / 255.0
BETA_SQ = 0.3


@dataclass
class EvalRecord:
    mae: float
    tp: np.ndarray   # (256,) int64
    fp: np.ndarray
    fn: np.ndarray


def mae(pred: np.ndarray, mask: np.ndarray) -> float:
    pred = np.asarray(pred)
    mask = np.asarray(mask)
    if pred.shape != mask.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs mask {mask.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - mask.astype(np.float64))))


def _validate_pair(pred, mask):
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.asarray(mask)
    if pred.shape != mask.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs mask {mask.shape}")
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise ValidationError("predictions must lie in [0,1]")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("mask must be binary")
    return pred, mask.astype(bool)


def eval_record(pred: np.ndarray, mask: np.ndarray) -> EvalRecord:
    """Threshold-sweep counts for one image.

    For each pixel, the number of thresholds it passes is
    searchsorted(thresholds, value, right), exactly |{k : t_k <= value}|,
    so the histogram of that bin index turns into tp/fp per threshold via
    suffix sums, faithful to the >= comparison without re-deriving bins.
    """
    pred, pos = _validate_pair(pred, mask)
    bins = np.searchsorted(THRESHOLDS, pred.ravel(), side="right")
    posm = pos.ravel()
    c_pos = np.bincount(bins[posm], minlength=257)
    c_neg = np.bincount(bins[~posm], minlength=257)
    # pixel passes threshold k iff its bin > k
    tp = np.cumsum(c_pos[::-1])[::-1][1:].astype(np.int64)
    fp = np.cumsum(c_neg[::-1])[::-1][1:].astype(np.int64)
    n_pos = int(posm.sum())
    fn = n_pos - tp
    return EvalRecord(mae=mae(pred, mask), tp=tp, fp=fp, fn=fn)


def _pr_from_counts(tp, fp, fn):
    tp = tp.astype(np.float64)
    denom_p = tp + fp
    denom_r = tp + fn
    precision = np.where(denom_p > 0, tp / np.maximum(denom_p, 1), 1.0)
    recall = np.where(denom_r > 0, tp / np.maximum(denom_r, 1), 1.0)
    return precision, recall


def pr_curve(records, average: str = "micro"):
    """(precision, recall) arrays of length 256.

    'micro' pools tp/fp/fn across images first; 'macro' averages the
    per-image precision/recall vectors.
    """
    records = list(records)
    if not records:
        raise ValidationError("pr_curve needs at least one record")
    if average == "micro":
        tp = np.sum([r.tp for r in records], axis=0)
        fp = np.sum([r.fp for r in records], axis=0)
        fn = np.sum([r.fn for r in records], axis=0)
        return _pr_from_counts(tp, fp, fn)
    if average == "macro":
        ps, rs = zip(*(_pr_from_counts(r.tp, r.fp, r.fn) for r in records))
        return np.mean(ps, axis=0), np.mean(rs, axis=0)
    raise ValidationError(f"average must be micro or macro, got {average!r}")


def max_f(records, beta_sq: float = BETA_SQ, average: str = "micro") -> float:
    precision, recall = pr_curve(records, average=average)
    num = (1.0 + beta_sq) * precision * recall
    den = beta_sq * precision + recall
    f = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return float(f.max())


def mean_mae(records) -> float:
    records = list(records)
    if not records:
        raise ValidationError("mean_mae needs at least one record")
    return float(np.mean([r.mae for r in records]))


# ---------------------------------------------------------------------------
# CSV export


def _provenance_lines(config: dict | None) -> list[str]:
    if not config:
        return []
    return [f"# {k} = {v}" for k, v in sorted(config.items())]


def write_pr_csv(path, precision, recall, config: dict | None = None) -> None:
    lines = _provenance_lines(config)
    lines.append("threshold,precision,recall")
    for k in range(256):
        lines.append(f"{THRESHOLDS[k]:.9f},{precision[k]:.9f},{recall[k]:.9f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_csv(path, mae_value: float, maxf_value: float,
                      config: dict | None = None) -> None:
    lines = _provenance_lines(config)
    lines.append("mae,maxF")
    lines.append(f"{mae_value:.9f},{maxf_value:.9f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
