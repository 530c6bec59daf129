"""Training loop, model evaluation, and model-level checkpoint helpers."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import FolderDataset, ensure_dir
from .errors import CheckpointError, NumericError, ValidationError
from .losses import make_targets, total_loss
from .metrics import EvalRecord, eval_record, max_f, mean_mae
from .net import SaliencyNet, build_model
from .optim import AdamW, EmaTracker, clip_global_norm, cosine_lr
from .tensor import Tensor, no_grad

CSV_HEADER = "step,lr,l_total,l_seg,l_bs,l_scm"


@dataclass
class TrainResult:
    checkpoint_path: Path
    csv_path: Path
    steps: int
    rows: list          # (step, lr, l_total, l_seg, l_bs, l_scm)
    seconds: float

    @property
    def initial_loss(self) -> float:
        return self.rows[0][2] if self.rows else float("nan")

    @property
    def final_loss(self) -> float:
        return self.rows[-1][2] if self.rows else float("nan")

    def smoothed(self, window: int = 10):
        """Mean l_total over the first and last ``window`` steps."""
        if not self.rows:
            return float("nan"), float("nan")
        losses = [r[2] for r in self.rows]
        w = min(window, len(losses))
        return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))


def _batches(n: int, batch_size: int, rng):
    """Endless stream of index batches, reshuffled every epoch.

    Trailing partial batches are dropped: they starve batch-norm statistics
    at the coarsest stride.  A set smaller than one batch is used whole.
    """
    if n <= batch_size:
        while True:
            yield rng.permutation(n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def train_run(cfg: RunConfig, data=None, out_dir=None) -> TrainResult:
    """Run the full optimization recipe and write checkpoint + loss CSV.

    ``data`` may be a preloaded (images, masks, ids) triple; otherwise
    ``cfg.train_dir`` is loaded from disk.  Deterministic given cfg.
    """
    cfg.validate()
    out = ensure_dir(out_dir or cfg.out_dir)
    if data is None:
        if not cfg.train_dir:
            raise ValidationError("no training data: set train_dir or pass data")
        images, masks, ids = FolderDataset(cfg.train_dir, cfg.image_size).load_all()
    else:
        images, masks, ids = data
    n = len(images)
    if n < 1:
        raise ValidationError("training set is empty")
    if images.shape[2] != cfg.image_size or images.shape[3] != cfg.image_size:
        raise ValidationError(
            f"data extents {images.shape[2:]} != configured {cfg.image_size}")

    model = build_model(cfg)
    named = list(model.named_parameters())
    opt = AdamW(named, lr=cfg.lr_max, weight_decay=cfg.weight_decay)
    ema = EmaTracker(named, decay=cfg.ema_decay)
    params = [p for _, p in named]
    batch_rng = np.random.default_rng([cfg.seed, 1])
    batch_iter = _batches(n, cfg.batch_size, batch_rng)

    cfg.save(out / "run_config.txt")
    rows = []
    started = time.perf_counter()
    model.train()
    for step in range(cfg.steps):
        idx = next(batch_iter)
        x = Tensor(images[idx].astype(model.dtype, copy=False))
        features = model(x)
        targets = make_targets(masks[idx], features.s_low.shape[2:],
                               dilate_kernel=cfg.dilate_kernel,
                               smooth_kernel=cfg.smooth_kernel,
                               dtype=model.dtype)
        bundle = total_loss(features, targets,
                            lambda_final=cfg.lambda_final,
                            lambda_coarse=cfg.lambda_coarse,
                            lambda_low=cfg.lambda_low,
                            lambda_boundary=cfg.lambda_boundary,
                            lambda_coord=cfg.lambda_coord,
                            weight_amp=cfg.weight_amp,
                            weight_pool=cfg.weight_pool)
        if not np.isfinite(bundle.l_total):
            batch_ids = [ids[i] for i in idx]
            raise NumericError(
                f"non-finite loss at step {step} (samples {batch_ids})")
        opt.zero_grad()
        bundle.total.backward()
        clip_global_norm(params, cfg.clip_norm)
        lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min)
        opt.step(lr)
        ema.update()
        rows.append((step, lr, bundle.l_total, bundle.l_seg,
                     bundle.l_bs, bundle.l_scm))
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_model_checkpoint(out / f"step{step + 1:06d}.ckpt", model, cfg,
                                  ema=ema, meta={"step": step + 1})

    csv_path = out / "train_log.csv"
    _write_loss_csv(csv_path, cfg, rows)
    ckpt_path = out / "model.ckpt"
    save_model_checkpoint(ckpt_path, model, cfg, ema=ema,
                          meta={"step": cfg.steps})
    return TrainResult(checkpoint_path=ckpt_path, csv_path=csv_path,
                       steps=cfg.steps, rows=rows,
                       seconds=time.perf_counter() - started)


def _write_loss_csv(path, cfg: RunConfig, rows) -> None:
    lines = [f"# {line}" for line in cfg.dumps().strip().splitlines()]
    lines.append(CSV_HEADER)
    for step, lr, l_total, l_seg, l_bs, l_scm in rows:
        lines.append(f"{step},{lr:.12g},{l_total:.9f},{l_seg:.9f},"
                     f"{l_bs:.9f},{l_scm:.9f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoint plumbing


def save_model_checkpoint(path, model: SaliencyNet, cfg: RunConfig,
                          ema: EmaTracker | None = None,
                          meta: dict | None = None) -> None:
    arrays = dict(model.named_state())
    if ema is not None:
        for name, shadow in ema.shadows.items():
            arrays["ema/" + name] = shadow
    save_checkpoint(path, arrays, cfg.to_dict(), meta=meta)


def load_model_checkpoint(path):
    """Rebuild the model a checkpoint describes and load its values.

    Returns (model, cfg, ema_shadows, meta); ema_shadows is {} when the
    checkpoint carries none.
    """
    arrays, config_dict, meta = load_checkpoint(path)
    try:
        cfg = RunConfig.from_dict(config_dict)
    except ValidationError as e:
        raise CheckpointError(f"{path}: bad embedded config: {e}") from e
    model = build_model(cfg)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("ema/")}
    ema_shadows = {k[4:]: v for k, v in arrays.items() if k.startswith("ema/")}
    try:
        model.load_state(model_arrays)
    except ValidationError as e:
        raise CheckpointError(f"{path}: state audit failed: {e}") from e
    return model, cfg, ema_shadows, meta


def restore_ema(model: SaliencyNet, ema_shadows: dict,
                decay: float) -> EmaTracker | None:
    if not ema_shadows:
        return None
    ema = EmaTracker(model.named_parameters(), decay=decay)
    unknown = sorted(set(ema_shadows) - set(ema.shadows))
    if unknown:
        raise CheckpointError(f"EMA shadows for unknown parameters: {unknown[:5]}")
    for name, arr in ema_shadows.items():
        if ema.shadows[name].shape != arr.shape:
            raise CheckpointError(f"EMA shadow shape mismatch for {name}")
        np.copyto(ema.shadows[name], arr)
    return ema


# ---------------------------------------------------------------------------
# evaluation


def predict_maps(model: SaliencyNet, images: np.ndarray,
                 ema: EmaTracker | None = None, batch_size: int = 8):
    """Final saliency maps (N,1,H,W) in eval mode, optionally through EMA."""
    was_training = model.training
    model.eval()
    outs = []

    def run():
        with no_grad():
            for start in range(0, len(images), batch_size):
                x = Tensor(images[start:start + batch_size].astype(model.dtype,
                                                                   copy=False))
                outs.append(model(x).m_hat.numpy().copy())

    if ema is not None:
        with ema.applied(model):
            run()
    else:
        run()
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0)


def evaluate_model(model: SaliencyNet, images: np.ndarray, masks: np.ndarray,
                   ema: EmaTracker | None = None) -> list[EvalRecord]:
    preds = predict_maps(model, images, ema=ema)
    return [eval_record(preds[i, 0], masks[i, 0]) for i in range(len(preds))]


def summarize(records) -> dict:
    return {"mae": mean_mae(records), "maxF": max_f(records)}


def gate_band_means(model: SaliencyNet, images: np.ndarray, masks: np.ndarray,
                    cfg: RunConfig, ema: EmaTracker | None = None):
    """Mean gate weight over boundary-band pixels (coord target > 0.5) vs.
    far-field pixels (coord target == 0), pooled over the whole set.

    Returns (band_mean, far_mean); None when the model has no gate output.
    """
    was_training = model.training
    model.eval()
    w_all, c_all = [], []

    def run():
        with no_grad():
            for start in range(0, len(images), 8):
                xb = images[start:start + 8].astype(model.dtype, copy=False)
                mb = masks[start:start + 8]
                features = model(Tensor(xb))
                if features.w_map is None:
                    return False
                targets = make_targets(mb, features.w_map.shape[2:],
                                       dilate_kernel=cfg.dilate_kernel,
                                       smooth_kernel=cfg.smooth_kernel,
                                       dtype=model.dtype)
                w_all.append(features.w_map.numpy().copy())
                c_all.append(targets.coord.numpy().copy())
        return True

    ok = run() if ema is None else _run_with_ema(ema, model, run)
    if was_training:
        model.train()
    if not ok:
        return None
    w = np.concatenate(w_all).ravel()
    c = np.concatenate(c_all).ravel()
    band = w[c > 0.5]
    far = w[c == 0.0]
    if band.size == 0 or far.size == 0:
        raise ValidationError("held-out set has no boundary band / far field")
    return float(band.mean()), float(far.mean())


def _run_with_ema(ema, model, fn):
    with ema.applied(model):
        return fn()
