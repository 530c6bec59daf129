"""Ablation harness: four variant families as pure config transformations.

Each family maps variant ids to config-field overrides on a shared base
config; ``run_family`` trains every variant under the identical seed and
budget and reports maxF/MAE, parameter count, and wall-clock per row.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import FolderDataset, generate_scene
from .errors import ValidationError
from .net import build_model
from .train import (evaluate_model, load_model_checkpoint,
                    summarize, train_run)

FAMILIES: dict[str, dict[str, dict]] = {
    "branches": {
        "baseline": {"branch_variant": "baseline"},
        "bs": {"branch_variant": "bs"},
        "rc": {"branch_variant": "rc"},
        "full": {},
    },
    "coordination": {
        "fixed": {"coord_variant": "fixed"},
        "scalar": {"coord_variant": "scalar"},
        "concat": {"coord_variant": "concat"},
        "scm": {},
    },
    "supervision": {
        "wo_both": {"lambda_boundary": 0.0, "lambda_coord": 0.0},
        "wo_boundary": {"lambda_boundary": 0.0},
        "wo_coord": {"lambda_coord": 0.0},
        "full": {},
    },
    "decoder": {
        "low": {"decoder_variant": "low"},
        "coarse": {"decoder_variant": "coarse"},
        "full": {},
    },
}


def build_variant(family: str, variant: str, base: RunConfig) -> RunConfig:
    if family not in FAMILIES:
        raise ValidationError(
            f"unknown family {family!r}; valid: {sorted(FAMILIES)}")
    table = FAMILIES[family]
    if variant not in table:
        raise ValidationError(
            f"unknown variant {variant!r} in family {family!r}; "
            f"valid: {sorted(table)}")
    return dataclasses.replace(base, **table[variant]).validate()


def config_diff(base: RunConfig, variant: RunConfig) -> dict:
    """Fields where the variant differs from the base config."""
    diff = {}
    for f in dataclasses.fields(RunConfig):
        b, v = getattr(base, f.name), getattr(variant, f.name)
        if b != v:
            diff[f.name] = v
    return diff


def _load_eval_set(cfg: RunConfig, n_eval: int):
    if cfg.val_dir:
        return FolderDataset(cfg.val_dir, cfg.image_size).load_all()[:2]
    samples = [generate_scene(10_000 + i, cfg.image_size, cfg.image_size,
                              cfg.difficulty) for i in range(n_eval)]
    return (np.stack([s.image for s in samples]),
            np.stack([s.mask for s in samples]))


def run_family(family: str, base: RunConfig, out_dir, data=None,
               n_eval: int = 8) -> list[dict]:
    """Train and evaluate every variant of one family; returns report rows.

    A variant that raises during training is recorded as failed and the run
    continues with the next one.
    """
    if family not in FAMILIES:
        raise ValidationError(
            f"unknown family {family!r}; valid: {sorted(FAMILIES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_images, eval_masks = _load_eval_set(base, n_eval)
    rows = []
    for variant in FAMILIES[family]:
        cfg = build_variant(family, variant, base)
        diff = config_diff(base, cfg)
        row = {"family": family, "variant": variant,
               "config_diff": ";".join(f"{k}={v}" for k, v in sorted(diff.items()))
                              or "(base)"}
        started = time.perf_counter()
        try:
            result = train_run(cfg, data=data, out_dir=out / variant)
            # score the final raw weights: desk-scale sweeps are far shorter
            # than the ~1/(1-decay) steps the EMA needs to forget its init
            model, _, _, _ = load_model_checkpoint(result.checkpoint_path)
            records = evaluate_model(model, eval_images, eval_masks)
            summary = summarize(records)
            row.update(status="ok", params=model.parameter_count(),
                       maxF=f"{summary['maxF']:.6f}", mae=f"{summary['mae']:.6f}")
        except Exception as e:  # noqa: BLE001 - report row, keep the family going
            row.update(status="failed", params="", maxF="", mae="",
                       error=f"{type(e).__name__}: {e}")
        row["seconds"] = f"{time.perf_counter() - started:.2f}"
        rows.append(row)
    return rows


REPORT_COLUMNS = ("family", "variant", "status", "params", "maxF", "mae",
                  "seconds", "config_diff")


def write_report(path, rows, base: RunConfig) -> None:
    lines = [f"# {line}" for line in base.dumps().strip().splitlines()]
    lines.append(",".join(REPORT_COLUMNS))
    for row in rows:
        lines.append(",".join(str(row.get(c, "")) for c in REPORT_COLUMNS))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def variant_parameter_counts(base: RunConfig) -> dict[str, int]:
    """Parameter count per branches-family variant (audit helper)."""
    counts = {}
    for variant in FAMILIES["branches"]:
        cfg = build_variant("branches", variant, base)
        counts[variant] = build_model(cfg).parameter_count()
    return counts
