"""Training configuration and the flat ``key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    # multiplicative learning-rate factor applied after every epoch
    lr_decay: float = 1.0
    latent_dim: int = 16
    hidden: tuple[int, ...] = (256,)
    alpha: float = 1.0
    # epochs over which the KL weight of the VLB ramps linearly from 0 to 1 (0 = off)
    kl_warmup: int = 0
    sigma_mu: float = 1e4
    sigma_sigma: float = 1e-4
    val_fraction: float = 0.25
    val_samples: int = 10
    val_max_rows: int = 2000
    use_skip: bool = True
    # "fixed": unit-variance Gaussian for real features; "learned": network outputs sigma
    real_sigma: str = "fixed"
    normalize: bool = True
    # float32 roughly halves training time; evaluation and checkpoints stay float64
    dtype: str = "float64"
    # marginalizer only: thin masks so every chain-rule query is seen in training
    mask_correction: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.real_sigma not in ("fixed", "learned"):
            raise ValueError(f"real_sigma must be 'fixed' or 'learned', got {self.real_sigma!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be 'float64' or 'float32', got {self.dtype!r}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.kl_warmup < 0:
            raise ValueError(f"kl_warmup must be >= 0, got {self.kl_warmup}")
        if self.epochs < 1 or self.batch_size < 1 or self.latent_dim < 1 or self.val_samples < 1:
            raise ValueError("epochs, batch_size, latent_dim and val_samples must be positive")

    def to_items(self) -> list[tuple[str, str]]:
        return [(f.name, format_value(getattr(self, f.name))) for f in fields(self)]

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        names = {f.name: f for f in fields(cls)}
        for key, raw in items.items():
            if key not in names:
                raise KeyError(f"unknown TrainConfig field {key!r}")
            kwargs[key] = parse_value(raw, getattr(cls(), key))
        return cls(**kwargs)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_value(raw: str, like):
    """Convert ``raw`` to the type of the example value ``like``."""
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(v) for v in raw.replace("-", ",").split(",") if v.strip())
    return raw


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def load_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))
