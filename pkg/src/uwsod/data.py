"""Synthetic underwater-degraded scenes and on-disk dataset handling.

A scene is a low-frequency background plus 1-3 bright foreground blobs
(ellipses or star-shaped radial polygons).  The binary mask records the
pre-degradation foreground support; the image then goes through the
degradation chain: blue-green channel gains, contrast compression toward
mid-gray, Gaussian blur, and additive Gaussian noise.  Hard mode also paints
1-2 distractor shapes in near-foreground colors that stay out of the mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import DataError, GenerationError, ValidationError

FRACTION_RANGE = (0.02, 0.6)
MAX_ATTEMPTS = 100

_GAIN_RANGES = ((0.3, 0.6), (0.8, 1.0), (0.8, 1.0))
_CONTRAST_RANGE = (0.5, 0.8)
_BLUR_RANGES = {"easy": (0.5, 1.5), "hard": (1.5, 3.0)}
_NOISE_RANGES = {"easy": (0.01, 0.03), "hard": (0.03, 0.06)}


@dataclass
class Sample:
    image: np.ndarray   # (3,H,W) float32 in [0,1]
    mask: np.ndarray    # (1,H,W) float32 in {0,1}
    id: str


def _uniform(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def _shape_support(rng, height: int, width: int) -> np.ndarray:
    """Boolean support of one random ellipse or star-shaped radial polygon."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy = rng.uniform(0.2, 0.8) * height
    cx = rng.uniform(0.2, 0.8) * width
    radius = rng.uniform(0.10, 0.32) * min(height, width)
    dy, dx = yy - cy, xx - cx
    theta = np.arctan2(dy, dx)
    dist = np.hypot(dy, dx)
    if rng.random() < 0.5:
        # rotated ellipse via a direction-dependent radius
        ecc = rng.uniform(0.5, 1.0)
        phi = rng.uniform(0.0, np.pi)
        r_theta = radius * ecc / np.sqrt(
            (ecc * np.cos(theta - phi)) ** 2 + np.sin(theta - phi) ** 2)
    else:
        lobes = int(rng.integers(3, 8))
        amp = rng.uniform(0.05, 0.4)
        phase = rng.uniform(0.0, 2 * np.pi)
        r_theta = radius * (1.0 + amp * np.cos(lobes * theta + phase))
    return dist <= r_theta


def _background(rng, height: int, width: int) -> np.ndarray:
    """Low-frequency per-channel gradient plus smooth upsampled noise."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    img = np.empty((3, height, width), dtype=np.float64)
    for c in range(3):
        base = rng.uniform(0.25, 0.6)
        gy = rng.uniform(-0.25, 0.25)
        gx = rng.uniform(-0.25, 0.25)
        img[c] = base + gy * yy + gx * xx
    coarse = rng.uniform(-0.08, 0.08, size=(3, 6, 6))
    zoom_y = np.clip((np.arange(height) * 6) // height, 0, 5)
    zoom_x = np.clip((np.arange(width) * 6) // width, 0, 5)
    img += gaussian_filter(coarse[:, zoom_y][:, :, zoom_x],
                           sigma=(0, height / 12, width / 12))
    return np.clip(img, 0.0, 1.0)


def generate_scene(seed: int, height: int, width: int,
                   difficulty: str = "easy", *,
                   blur_range=None, noise_range=None, contrast_range=None,
                   gain_ranges=None) -> Sample:
    """Deterministic sample generation; pure in (seed, extents, difficulty,
    and the optional range overrides)."""
    if height % 32 or width % 32:
        raise ValidationError(f"extents must be divisible by 32, got {height}x{width}")
    if difficulty not in ("easy", "hard"):
        raise ValidationError(f"difficulty must be easy/hard, got {difficulty!r}")
    blur_range = _BLUR_RANGES[difficulty] if blur_range is None else blur_range
    noise_range = _NOISE_RANGES[difficulty] if noise_range is None else noise_range
    contrast_range = _CONTRAST_RANGE if contrast_range is None else contrast_range
    gain_ranges = _GAIN_RANGES if gain_ranges is None else gain_ranges

    rng = np.random.default_rng([int(seed), height, width,
                                 0 if difficulty == "easy" else 1])
    lo, hi = FRACTION_RANGE
    for _ in range(MAX_ATTEMPTS):
        composite = _background(rng, height, width)
        mask = np.zeros((height, width), dtype=bool)

        fg_color = rng.uniform(0.55, 0.95, size=3)
        for _ in range(50):
            if np.max(np.abs(fg_color - composite.mean(axis=(1, 2)))) >= 0.25:
                break
            fg_color = rng.uniform(0.55, 0.95, size=3)

        if difficulty == "hard":
            for _ in range(int(rng.integers(1, 3))):
                support = _shape_support(rng, height, width)
                color = np.clip(fg_color + rng.uniform(-0.08, 0.08, size=3), 0, 1)
                composite[:, support] = color[:, None]

        for _ in range(int(rng.integers(1, 4))):
            support = _shape_support(rng, height, width)
            jitter = np.clip(fg_color + rng.uniform(-0.05, 0.05, size=3), 0, 1)
            composite[:, support] = jitter[:, None]
            mask |= support

        fraction = mask.mean()
        if lo <= fraction <= hi:
            break
    else:
        raise GenerationError(
            f"no scene with mask fraction in {FRACTION_RANGE} after "
            f"{MAX_ATTEMPTS} attempts (seed {seed})")

    image = composite.copy()
    gains = np.array([_uniform(rng, r) for r in gain_ranges])
    image *= gains[:, None, None]
    contrast = _uniform(rng, contrast_range)
    if contrast != 1.0:
        image = 0.5 + contrast * (image - 0.5)
    sigma = _uniform(rng, blur_range)
    if sigma > 0:
        image = gaussian_filter(image, sigma=(0, sigma, sigma))
    noise_sigma = _uniform(rng, noise_range)
    if noise_sigma > 0:
        image = image + rng.normal(0.0, noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    return Sample(image=image.astype(np.float32),
                  mask=mask[None].astype(np.float32),
                  id=f"synth-{difficulty}-{seed:08d}")


# ---------------------------------------------------------------------------
# PNG round-trip


def save_sample(sample: Sample, images_dir, masks_dir) -> None:
    img8 = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img8.transpose(1, 2, 0), mode="RGB").save(
        Path(images_dir) / f"{sample.id}.png")
    mask8 = (sample.mask[0] > 0.5).astype(np.uint8) * 255
    Image.fromarray(mask8, mode="L").save(Path(masks_dir) / f"{sample.id}.png")


def _open_image(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError as e:
        raise DataError(f"missing file: {path}") from e
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"unreadable image {path}: {e}") from e


def load_pair(image_path, mask_path, target: int = 352) -> Sample:
    """Load an image/mask pair, resize to target x target, scale to [0,1].

    The image is resized bilinearly; the mask nearest-neighbor then
    thresholded at 0.5 so it stays strictly binary.
    """
    img = _open_image(image_path)
    msk = _open_image(mask_path)
    if len(msk.getbands()) != 1:
        raise ValidationError(f"mask {mask_path} must be single-channel, "
                              f"got bands {msk.getbands()}")
    if img.size != msk.size:
        raise ValidationError(
            f"extent mismatch: image {img.size} vs mask {msk.size}")
    img = img.convert("RGB")
    msk = msk.convert("L")   # binary "1" and 16-bit modes normalize to 0..255
    if img.size != (target, target):
        img = img.resize((target, target), Image.BILINEAR)
        msk = msk.resize((target, target), Image.NEAREST)
    image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    mask = (np.asarray(msk, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)
    return Sample(image=image, mask=mask[None], id=Path(image_path).stem)


class FolderDataset:
    """images/*.png and masks/*.png with matching stems, loaded at a fixed size."""

    def __init__(self, root, target: int):
        self.root = Path(root)
        self.target = target
        images = self.root / "images"
        masks = self.root / "masks"
        if not images.is_dir() or not masks.is_dir():
            raise DataError(f"{root} needs images/ and masks/ subdirectories")
        self.stems = sorted(p.stem for p in images.glob("*.png"))
        if not self.stems:
            raise DataError(f"no PNG images under {images}")
        missing = [s for s in self.stems if not (masks / f"{s}.png").exists()]
        if missing:
            raise DataError(f"masks missing for stems: {missing[:5]}")

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, i: int) -> Sample:
        stem = self.stems[i]
        return load_pair(self.root / "images" / f"{stem}.png",
                         self.root / "masks" / f"{stem}.png",
                         target=self.target)

    def load_all(self):
        """All samples as stacked arrays (images (N,3,H,W), masks (N,1,H,W))."""
        samples = [self[i] for i in range(len(self))]
        images = np.stack([s.image for s in samples])
        masks = np.stack([s.mask for s in samples])
        return images, masks, [s.id for s in samples]


def materialize_dataset(out_dir, n: int, size: int, difficulty: str,
                        seed: int, force: bool = False,
                        run_config: dict | None = None) -> dict:
    """Generate n samples to the folder layout, with a JSON manifest."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise ValidationError(
            f"{manifest_path} already exists; pass force to overwrite")
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    seeds = list(range(seed, seed + n))
    ids = []
    for s in seeds:
        sample = generate_scene(s, size, size, difficulty)
        save_sample(sample, out / "images", out / "masks")
        ids.append(sample.id)
    manifest = {
        "count": n, "size": size, "difficulty": difficulty,
        "seed_start": seed, "seeds": seeds, "ids": ids,
        "fraction_range": list(FRACTION_RANGE),
    }
    if run_config is not None:
        manifest["run_config"] = run_config
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create directory {path}: {e}") from e
    return p
