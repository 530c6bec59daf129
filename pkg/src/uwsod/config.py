"""Flat run configuration: one dataclass, one key=value file format.

Every knob the CLI exposes lives here so that checkpoints and reports can
embed the complete provenance of a run.  Unknown keys are rejected on load;
command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import DataError, ValidationError

BRANCH_VARIANTS = ("baseline", "bs", "rc", "full")
COORD_VARIANTS = ("fixed", "scalar", "concat", "scm")
DECODER_VARIANTS = ("low", "coarse", "full")


@dataclass
class RunConfig:
    seed: int = 7
    precision: str = "float32"

    # data
    image_size: int = 96
    difficulty: str = "easy"
    train_dir: str = ""
    val_dir: str = ""
    out_dir: str = "runs/default"

    # model
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256)
    base_channels: int = 64
    rc_kernels: tuple[int, ...] = (7, 15)
    coord_hidden: int = 0          # 0 = half of base_channels
    laplacian_enabled: bool = True
    branch_variant: str = "full"
    coord_variant: str = "scm"
    decoder_variant: str = "full"

    # supervision
    lambda_final: float = 4.0
    lambda_coarse: float = 0.25
    lambda_low: float = 0.25
    lambda_boundary: float = 1.0
    lambda_coord: float = 1.0
    weight_amp: float = 5.0        # boundary-band emphasis in the structure loss
    weight_pool: int = 15          # pooling window for the emphasis map
    dilate_kernel: int = 5         # coordination target: max-pool window
    smooth_kernel: int = 5         # coordination target: avg-pool window

    # optimization
    batch_size: int = 4
    steps: int = 200
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-2
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    checkpoint_every: int = 0      # 0 = final checkpoint only

    def validate(self) -> "RunConfig":
        if self.precision not in ("float32", "float64"):
            raise ValidationError(f"precision must be float32/float64, got {self.precision!r}")
        if self.image_size < 32 or self.image_size % 32:
            raise ValidationError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.difficulty not in ("easy", "hard"):
            raise ValidationError(f"difficulty must be easy/hard, got {self.difficulty!r}")
        if len(self.encoder_channels) != 4 or any(c < 1 for c in self.encoder_channels):
            raise ValidationError(f"encoder_channels needs four positive entries, got {self.encoder_channels}")
        if any(a > b for a, b in zip(self.encoder_channels, self.encoder_channels[1:])):
            raise ValidationError("encoder_channels must be non-decreasing")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ValidationError(f"base_channels must be even and >= 2, got {self.base_channels}")
        if len(self.rc_kernels) != 2 or any(k < 1 or k % 2 == 0 for k in self.rc_kernels):
            raise ValidationError(f"rc_kernels needs two odd entries, got {self.rc_kernels}")
        if self.coord_hidden < 0:
            raise ValidationError("coord_hidden must be >= 0")
        if self.branch_variant not in BRANCH_VARIANTS:
            raise ValidationError(f"branch_variant must be one of {BRANCH_VARIANTS}")
        if self.coord_variant not in COORD_VARIANTS:
            raise ValidationError(f"coord_variant must be one of {COORD_VARIANTS}")
        if self.decoder_variant not in DECODER_VARIANTS:
            raise ValidationError(f"decoder_variant must be one of {DECODER_VARIANTS}")
        for name in ("lambda_final", "lambda_coarse", "lambda_low",
                     "lambda_boundary", "lambda_coord", "weight_amp"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("weight_pool", "dilate_kernel", "smooth_kernel"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ValidationError(f"{name} must be odd and >= 1, got {v}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not (0 < self.lr_min <= self.lr_max):
            raise ValidationError("need 0 < lr_min <= lr_max")
        if self.weight_decay < 0 or self.clip_norm <= 0:
            raise ValidationError("weight_decay >= 0 and clip_norm > 0 required")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValidationError("ema_decay must be in [0, 1)")
        if self.checkpoint_every < 0:
            raise ValidationError("checkpoint_every must be >= 0")
        return self

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        kwargs = {}
        for name, value in d.items():
            if isinstance(value, list):
                value = tuple(int(x) for x in value)
            kwargs[name] = value
        return cls(**kwargs).validate()

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno} is not 'key = value': {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in fields:
                raise ValidationError(f"unknown config key {key!r} (line {lineno})")
            kwargs[key] = _parse_value(value, fields[key].type, key)
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise DataError(f"cannot read config {path}: {e}") from e
        return cls.loads(text)


def parse_field(name: str, value: str):
    """Parse one field's value from its string form (the CLI flag surface)."""
    for f in dataclasses.fields(RunConfig):
        if f.name == name:
            return _parse_value(value, f.type, name)
    raise ValidationError(f"unknown config key {name!r}")


def _parse_value(value: str, ftype, key: str):
    base = str(ftype)
    if "tuple" in base:
        try:
            return tuple(int(x) for x in value.split(",") if x.strip())
        except ValueError as e:
            raise ValidationError(f"bad tuple for {key!r}: {value!r}") from e
    if ftype in (bool, "bool"):
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"bad bool for {key!r}: {value!r}")
    if ftype in (int, "int"):
        try:
            return int(value)
        except ValueError as e:
            raise ValidationError(f"bad int for {key!r}: {value!r}") from e
    if ftype in (float, "float"):
        try:
            return float(value)
        except ValueError as e:
            raise ValidationError(f"bad float for {key!r}: {value!r}") from e
    return value
