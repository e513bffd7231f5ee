"""Unobserved-feature mask samplers (1 = unobserved).

Image masks are returned flattened in row-major order, so they line up with
image datasets whose features are pixels. Every sampler takes an explicit
``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

RECT_RETRIES = 10_000
PATTERN_RETRIES = 1_000

# Face-completion test masks on 128x128 images: (x1, x2, y1, y2), x = column, y = row.
GFC_MASKS = {
    "O1": (33, 70, 52, 115),
    "O2": (57, 70, 95, 115),
    "O3": (29, 98, 52, 73),
    "O4": (29, 66, 52, 73),
    "O5": (61, 99, 52, 73),
    "O6": (40, 87, 86, 123),
}


class MaskBudgetError(RuntimeError):
    """A rejection sampler exhausted its retry budget."""


def force_missing(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Union ``b`` with the missing-value mask of ``x`` (NaN marks a missing cell)."""
    return np.maximum(b, np.isnan(x)).astype(float)


def sample_mask_bernoulli(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    x = np.asarray(x, dtype=float)
    b = (rng.random(x.shape) < rate).astype(float)
    return force_missing(b, x)


def sample_mask_popcount(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``k`` of ``d`` features unobserved, chosen uniformly."""
    if not 0 <= k <= d:
        raise ValueError(f"popcount {k} outside [0, {d}]")
    b = np.zeros(d)
    b[rng.choice(d, size=k, replace=False)] = 1.0
    return b


def sample_mask_rectangular(
    h: int,
    w: int,
    rng: np.random.Generator,
    min_area_frac: float = 0.25,
    min_side: int = 0,
) -> np.ndarray:
    """Rectangle spanned by two uniform corner points; small ones are rejected."""
    if h < 2 or w < 2:
        raise ValueError("rectangular masks need h, w >= 2")
    for _ in range(RECT_RETRIES):
        r0, r1 = np.sort(rng.integers(0, h + 1, size=2))
        c0, c1 = np.sort(rng.integers(0, w + 1, size=2))
        rh, rw = r1 - r0, c1 - c0
        if rh * rw >= min_area_frac * h * w and min(rh, rw) >= min_side and rh * rw > 0:
            b = np.zeros((h, w))
            b[r0:r1, c0:c1] = 1.0
            return b.reshape(-1)
    raise MaskBudgetError(f"no acceptable rectangle after {RECT_RETRIES} draws")


def sample_mask_line(h: int, w: int, rng: np.random.Generator, width: int = 3) -> np.ndarray:
    """Observed pixels form one horizontal band of ``width`` rows; the rest is unobserved."""
    if not 1 <= width <= h:
        raise ValueError(f"line width {width} must lie in [1, {h}]")
    top = int(rng.integers(0, h - width + 1))
    b = np.ones((h, w))
    b[top:top + width] = 0.0
    return b.reshape(-1)


def sample_mask_center(h: int, w: int) -> np.ndarray:
    b = np.zeros((h, w))
    b[h // 4: h // 4 + h // 2, w // 4: w // 4 + w // 2] = 1.0
    return b.reshape(-1)


def sample_mask_half(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    b = np.zeros((h, w))
    side = int(rng.integers(4))
    if side == 0:
        b[: h // 2] = 1.0
    elif side == 1:
        b[h - h // 2:] = 1.0
    elif side == 2:
        b[:, : w // 2] = 1.0
    else:
        b[:, w - w // 2:] = 1.0
    return b.reshape(-1)


def sample_mask_random(h: int, w: int, rng: np.random.Generator, rate: float = 0.8) -> np.ndarray:
    return (rng.random(h * w) < rate).astype(float)


def sample_mask_fixed(h: int, w: int, x1: int, x2: int, y1: int, y2: int) -> np.ndarray:
    """Unobserved region covering columns x1..x2 and rows y1..y2, both inclusive."""
    if not (0 <= x1 <= x2 < w and 0 <= y1 <= y2 < h):
        raise ValueError(f"region x[{x1},{x2}] y[{y1},{y2}] outside a {h}x{w} image")
    b = np.zeros((h, w))
    b[y1: y2 + 1, x1: x2 + 1] = 1.0
    return b.reshape(-1)


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def bicubic_weights(out_idx: np.ndarray, src_size: int, dst_size: int) -> np.ndarray:
    """Dense ``(len(out_idx), src_size)`` matrix resampling a 1-D signal bicubically.

    Only the requested output coordinates are materialized, so a crop of a huge
    upsampled image costs no more than the crop itself.
    """
    scale = src_size / dst_size
    src = (np.asarray(out_idx, dtype=float) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    weights = np.zeros((len(src), src_size))
    rows = np.arange(len(src))
    for tap in range(-1, 3):
        idx = base + tap
        wt = _cubic_kernel(src - idx)
        np.add.at(weights, (rows, np.clip(idx, 0, src_size - 1)), wt)
    return weights


@dataclass
class PatternMaskSampler:
    """Thresholded bicubic upsampling of uniform noise, cropped at random positions.

    The noise image is drawn once; each call picks a new crop position and
    rejects crops whose unobserved fraction is outside ``[lo, hi]``.
    """

    rng: np.random.Generator
    noise: np.ndarray | None = None
    noise_size: int = 600
    upsampled_size: int = 10_000
    crop: int = 64
    threshold: float = 0.25
    lo: float = 0.2
    hi: float = 0.3
    retries: int = PATTERN_RETRIES

    def __post_init__(self):
        if self.noise is None:
            self.noise = self.rng.random((self.noise_size, self.noise_size))
        self.noise = np.asarray(self.noise, dtype=float)

    def crop_values(self, top: int, left: int) -> np.ndarray:
        n_src = self.noise.shape[0]
        wr = bicubic_weights(np.arange(top, top + self.crop), n_src, self.upsampled_size)
        wc = bicubic_weights(np.arange(left, left + self.crop), self.noise.shape[1], self.upsampled_size)
        return wr @ self.noise @ wc.T

    def __call__(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng or self.rng
        for _ in range(self.retries):
            top, left = rng.integers(0, self.upsampled_size - self.crop + 1, size=2)
            b = (self.crop_values(int(top), int(left)) < self.threshold).astype(float)
            if self.lo <= b.mean() <= self.hi:
                return b.reshape(-1)
        raise MaskBudgetError(f"no pattern crop within [{self.lo}, {self.hi}] after {self.retries} draws")


def sample_mask_pattern(rng: np.random.Generator, noise: np.ndarray | None = None) -> np.ndarray:
    return PatternMaskSampler(rng, noise=noise)()


def um_mask_transform(b0: np.ndarray, rng: np.random.Generator, u=None) -> np.ndarray:
    """Thin a mask by an independent Bernoulli(u) mask, one ``u ~ U[0, 1]`` per row.

    This is the mask distribution a chain-rule marginalizer actually queries
    when unobserved features are visited in uniformly random order.
    """
    b0 = np.asarray(b0, dtype=float)
    if u is None:
        u = rng.random(b0.shape[:-1] + (1,)) if b0.ndim > 1 else rng.random()
    b1 = (rng.random(b0.shape) < u).astype(float)
    return b0 * b1


# --- specs ------------------------------------------------------------------

_DEFAULTS = {
    "bernoulli": [0.2],
    "random": [0.8],
    "line": [3],
    "rectangular": [0.25, 0],
    "popcount": [None],
}


@dataclass
class MaskSpec:
    kind: str
    params: list = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "MaskSpec":
        """Parse ``kind[:p1,p2,...]``, e.g. ``bernoulli:0.2``, ``line:3``, ``fixed:O1``."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        known = {"bernoulli", "all", "popcount", "rectangular", "line", "center", "half", "random", "pattern", "fixed"}
        if kind not in known:
            raise ValueError(f"unknown mask kind {kind!r}")
        params = [p.strip() for p in rest.split(",") if p.strip()] if rest else []
        if kind == "fixed" and len(params) == 1:
            if params[0].upper() not in GFC_MASKS:
                raise ValueError(f"unknown named region {params[0]!r}")
            params = list(GFC_MASKS[params[0].upper()])
        params = [_number(p) for p in params]
        if not params and kind in _DEFAULTS:
            params = list(_DEFAULTS[kind])
        spec = cls(kind, params)
        if kind in ("bernoulli", "random") and not 0 <= params[0] <= 1:
            raise ValueError(f"{kind} rate must lie in [0, 1]")
        if kind == "fixed" and len(params) != 4:
            raise ValueError("fixed region needs x1,x2,y1,y2")
        return spec

    def __str__(self) -> str:
        params = [p for p in self.params if p is not None]
        return self.kind + (":" + ",".join(str(p) for p in params) if params else "")


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def image_dims(d: int, dims: tuple[int, int] | None) -> tuple[int, int]:
    if dims is not None:
        if dims[0] * dims[1] != d:
            raise ValueError(f"image dims {dims} do not match {d} features")
        return dims
    side = int(round(np.sqrt(d)))
    if side * side != d:
        raise ValueError(f"cannot infer square image dims for {d} features")
    return side, side


def make_sampler(spec: MaskSpec | str, d: int, dims: tuple[int, int] | None = None, rng: np.random.Generator | None = None
                 ) -> Callable[[np.ndarray, np.random.Generator], np.ndarray]:
    """Batch sampler ``(x, rng) -> b`` for ``(n, d)`` data, with missing cells forced unobserved."""
    if isinstance(spec, str):
        spec = MaskSpec.parse(spec)
    kind, p = spec.kind, spec.params

    if kind == "bernoulli":
        return lambda x, rng: sample_mask_bernoulli(x, p[0], rng)

    if kind in ("all", "popcount"):
        k = d if kind == "all" or p[0] is None else int(p[0])

        def fixed_count(x, rng):
            b = np.stack([sample_mask_popcount(d, k, rng) for _ in range(len(x))]) if len(x) else np.zeros((0, d))
            return force_missing(b, x)

        return fixed_count

    h, w = image_dims(d, dims)
    if kind == "pattern":
        pattern = PatternMaskSampler(rng or np.random.default_rng(0), crop=h) if h == w else None
        if pattern is None:
            raise ValueError("pattern masks need square images")
        one = pattern
    elif kind == "rectangular":
        one = lambda rng: sample_mask_rectangular(h, w, rng, float(p[0]), int(p[1]) if len(p) > 1 else 0)
    elif kind == "line":
        one = lambda rng: sample_mask_line(h, w, rng, int(p[0]))
    elif kind == "center":
        one = lambda rng: sample_mask_center(h, w)
    elif kind == "half":
        one = lambda rng: sample_mask_half(h, w, rng)
    elif kind == "random":
        one = lambda rng: sample_mask_random(h, w, rng, float(p[0]))
    elif kind == "fixed":
        region = sample_mask_fixed(h, w, *(int(v) for v in p))
        one = lambda rng: region
    else:  # pragma: no cover - parse() rejects unknown kinds
        raise ValueError(kind)

    def image_sampler(x, rng):
        b = np.stack([one(rng) for _ in range(len(x))]) if len(x) else np.zeros((0, d))
        return force_missing(b, x)

    return image_sampler
