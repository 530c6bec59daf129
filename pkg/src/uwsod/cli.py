"""Command-line entry points: synth, train, infer, eval, ablate, selfcheck.

The CLI owns argument parsing, config assembly, and artifact provenance;
all real work happens in the library modules.  Exit codes: 0 success,
1 validation error, 2 numeric error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .ablation import FAMILIES, run_family, write_report
from .config import RunConfig, parse_field
from .data import FolderDataset, _open_image, ensure_dir, materialize_dataset
from .errors import DataError, UwsodError, ValidationError
from .metrics import eval_record, max_f, mean_mae, pr_curve, write_pr_csv, \
    write_summary_csv
from .selfcheck import format_report, run_selfcheck
from .tensor import Tensor, no_grad
from .train import evaluate_model, load_model_checkpoint, restore_ema, \
    summarize, train_run


# ---------------------------------------------------------------------------
# config plumbing


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "run configuration",
        "values from --config FILE are applied first; explicit flags win")
    group.add_argument("--config", metavar="FILE",
                       help="key = value configuration file")
    for f in dataclasses.fields(RunConfig):
        default = f.default
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        group.add_argument("--" + f.name.replace("_", "-"), metavar="V",
                           dest=f.name, help=f"(default {default})")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = parse_field(f.name, raw)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


# ---------------------------------------------------------------------------
# image helpers


def _load_image_array(path, target: int) -> np.ndarray:
    """(3, target, target) float32 in [0,1], bilinearly resized like training data."""
    img = _open_image(path).convert("RGB")
    if img.size != (target, target):
        img = img.resize((target, target), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0


def _write_gray(path, values: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def _collect_images(entries) -> list[Path]:
    paths: list[Path] = []
    for entry in entries:
        p = Path(entry)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.png")))
        elif p.exists():
            paths.append(p)
        else:
            raise DataError(f"no such image or directory: {p}")
    if not paths:
        raise ValidationError("no input images found")
    return paths


# ---------------------------------------------------------------------------
# commands


def _cmd_synth(args) -> int:
    size = int(args.size)
    if size < 32 or size % 32:
        raise ValidationError(
            f"size must be a positive multiple of 32, got {size}")
    manifest = materialize_dataset(
        args.out, n=int(args.n), size=size, difficulty=args.difficulty,
        seed=int(args.seed), force=args.force,
        run_config={"command": "synth", "n": int(args.n), "size": size,
                    "difficulty": args.difficulty, "seed": int(args.seed)})
    print(f"wrote {manifest['count']} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    result = train_run(cfg)
    first, last = result.smoothed()
    print(f"trained {result.steps} steps in {result.seconds:.1f}s")
    print(f"l_total 10-step mean, first/last: {first:.6f} / {last:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss csv:   {result.csv_path}")
    if cfg.val_dir:
        model, _, shadows, _ = load_model_checkpoint(result.checkpoint_path)
        images, masks, _ = FolderDataset(cfg.val_dir, cfg.image_size).load_all()
        summary = summarize(evaluate_model(model, images, masks))
        write_summary_csv(Path(cfg.out_dir) / "summary.csv", summary["mae"],
                          summary["maxF"], config=cfg.to_dict())
        print(f"val mae={summary['mae']:.6f} maxF={summary['maxF']:.6f}")
        # the averaged copy needs ~1/(1-decay) steps to forget its
        # initialization; report it separately so short runs aren't misread
        ema = restore_ema(model, shadows, cfg.ema_decay)
        if ema is not None:
            es = summarize(evaluate_model(model, images, masks, ema=ema))
            print(f"val (ema) mae={es['mae']:.6f} maxF={es['maxF']:.6f}")
    return 0


def _cmd_infer(args) -> int:
    model, cfg, shadows, _ = load_model_checkpoint(args.checkpoint)
    ema = None
    if args.ema:
        ema = restore_ema(model, shadows, cfg.ema_decay)
        if ema is None:
            raise ValidationError("checkpoint carries no EMA shadows")
    paths = _collect_images(args.images)
    out = ensure_dir(args.out)
    # main maps keep the input stem so eval can pair them with same-named
    # masks; diagnostics live in a subdirectory to keep the pairing glob clean
    diag = ensure_dir(out / "diagnostics") if args.diagnostics else None
    cfg.save(out / "run_config.txt")
    model.eval()

    def run():
        with no_grad():
            for path in paths:
                image = _load_image_array(path, cfg.image_size)
                feats = model(Tensor(image[None].astype(model.dtype)))
                stem = path.stem
                _write_gray(out / f"{stem}.png", feats.m_hat.numpy()[0, 0])
                if diag is not None:
                    if feats.e_hat is not None:
                        _write_gray(diag / f"{stem}_boundary.png",
                                    feats.e_hat.numpy()[0, 0])
                    if feats.w_map is not None:
                        _write_gray(diag / f"{stem}_wmap.png",
                                    feats.w_map.numpy()[0, 0])

    if ema is not None:
        with ema.applied(model):
            run()
    else:
        run()
    print(f"wrote {len(paths)} saliency map(s) to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir, mask_dir = Path(args.pred), Path(args.masks)
    stems = sorted(p.stem for p in pred_dir.glob("*.png"))
    if not stems:
        raise DataError(f"no PNG predictions under {pred_dir}")
    records = []
    for stem in stems:
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            raise DataError(f"missing ground-truth mask {mask_path}")
        pred = np.asarray(_open_image(pred_dir / f"{stem}.png").convert("L"),
                          dtype=np.float64) / 255.0
        mask = (np.asarray(_open_image(mask_path).convert("L"),
                           dtype=np.float64) / 255.0 >= 0.5).astype(np.float64)
        if pred.shape != mask.shape:
            raise ValidationError(
                f"{stem}: prediction {pred.shape} vs mask {mask.shape}")
        records.append(eval_record(pred, mask))
    precision, recall = pr_curve(records, average=args.average)
    mae_value = mean_mae(records)
    maxf_value = max_f(records, average=args.average)
    provenance = {"command": "eval", "pred_dir": str(pred_dir),
                  "masks_dir": str(mask_dir), "average": args.average,
                  "images": len(records)}
    out = ensure_dir(args.out)
    write_pr_csv(out / "pr_curve.csv", precision, recall, config=provenance)
    write_summary_csv(out / "summary.csv", mae_value, maxf_value,
                      config=provenance)
    print(f"evaluated {len(records)} images: "
          f"mae={mae_value:.6f} maxF={maxf_value:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    families = list(FAMILIES) if args.family == "all" else [args.family]
    out_path = Path(args.out)
    work = ensure_dir(args.work_dir) if args.work_dir \
        else ensure_dir(out_path.parent / "ablation_runs")
    rows = []
    for family in families:
        rows.extend(run_family(family, cfg, work / family,
                               n_eval=int(args.n_eval)))
    ensure_dir(out_path.parent)
    write_report(out_path, rows, cfg)
    failed = sum(1 for r in rows if r["status"] != "ok")
    note = f" ({failed} failed)" if failed else ""
    print(f"wrote {len(rows)} variant rows to {out_path}{note}")
    return 0


def _cmd_selfcheck(args) -> int:
    results = run_selfcheck(probes=int(args.probes))
    print(format_report(results))
    return 0 if all(r.ok for r in results) else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwsod",
        description="Salient-object detection for degraded underwater imagery: "
                    "synthesize data, train, infer, evaluate, ablate, self-check.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialize a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--n", default=64, help="number of samples")
    p.add_argument("--size", default=96, help="square image size (multiple of 32)")
    p.add_argument("--difficulty", default="easy", choices=("easy", "hard"))
    p.add_argument("--seed", default=7, help="first sample seed")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing dataset manifest")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a run configuration")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("infer", help="predict saliency maps from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, nargs="+",
                   help="image files and/or directories of PNGs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ema", action="store_true",
                   help="use the EMA parameter shadows from the checkpoint")
    p.add_argument("--diagnostics", action="store_true",
                   help="also write boundary-probability and gate-weight maps")
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("eval", help="score saved prediction maps against masks")
    p.add_argument("--pred", required=True, help="directory of prediction PNGs")
    p.add_argument("--masks", required=True, help="directory of ground-truth PNGs")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.add_argument("--average", default="micro", choices=("micro", "macro"))
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    p.add_argument("--family", default="all",
                   choices=("all",) + tuple(FAMILIES),
                   help="which variant family to run")
    p.add_argument("--out", default="ablation_report.csv",
                   help="report CSV path")
    p.add_argument("--work-dir", default="",
                   help="where variant runs are written "
                        "(default: <report dir>/ablation_runs)")
    p.add_argument("--n-eval", default=8,
                   help="held-out synthetic eval images when val_dir is unset")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_ablate)

    p = sub.add_parser("selfcheck", help="run the built-in invariant battery")
    p.add_argument("--probes", default=20,
                   help="finite-difference probes per gradient family")
    p.set_defaults(handler=_cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except UwsodError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
