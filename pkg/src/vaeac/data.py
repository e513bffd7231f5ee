"""Datasets: schema, CSV and IDX ingestion, normalization, corruption, synthetic data.

Cells are stored as float64 with ``NaN`` as the missing marker; categorical
cells hold the integer label index.
"""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

REAL, CATEGORICAL, BINARY = "real", "categorical", "binary"
KINDS = (REAL, CATEGORICAL, BINARY)
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
TARGET_KEY = "_target"
IMAGE_SHAPE_KEY = "_image_shape"


class SchemaError(ValueError):
    pass


@dataclass
class Feature:
    name: str
    kind: str
    labels: list[str] = field(default_factory=list)
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")

    @property
    def n_categories(self) -> int:
        return len(self.labels) if self.kind == CATEGORICAL else 2 if self.kind == BINARY else 0


@dataclass
class FeatureSchema:
    features: list[Feature]
    target: int | None = None

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def kinds(self) -> list[str]:
        return [f.kind for f in self.features]

    def indices(self, kind: str) -> np.ndarray:
        return np.array([i for i, f in enumerate(self.features) if f.kind == kind], dtype=np.intp)

    def validate(self) -> "FeatureSchema":
        for f in self.features:
            if f.kind == CATEGORICAL and len(f.labels) < 2:
                raise SchemaError(f"categorical feature {f.name!r} needs at least 2 labels")
            if f.kind == REAL and not f.std > 0:
                raise SchemaError(f"real feature {f.name!r} has non-positive std")
        return self

    @classmethod
    def all_real(cls, d: int, prefix: str = "x") -> "FeatureSchema":
        return cls([Feature(f"{prefix}{i + 1}", REAL) for i in range(d)])

    @classmethod
    def all_binary(cls, d: int, prefix: str = "p") -> "FeatureSchema":
        return cls([Feature(f"{prefix}{i}", BINARY) for i in range(d)])


@dataclass
class Dataset:
    schema: FeatureSchema
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.schema):
            raise SchemaError(f"values of shape {self.values.shape} do not match {len(self.schema)} features")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.schema, self.values[rows], dict(self.meta))


# --- schema config ----------------------------------------------------------

def parse_schema_config(text: str) -> dict:
    """Parse ``column = kind[: label, label, ...]`` lines.

    ``_target = column`` marks the target; ``_image_shape = 28x28`` records the
    pixel grid of image data.
    """
    kinds: dict[str, tuple[str, list[str]]] = {}
    target = None
    image_shape = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"schema config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == TARGET_KEY:
            target = value
            continue
        if key == IMAGE_SHAPE_KEY:
            try:
                image_shape = tuple(int(v) for v in value.lower().split("x"))
            except ValueError:
                raise SchemaError(f"schema config line {lineno}: bad image shape {value!r}") from None
            continue
        kind, _, labels = value.partition(":")
        kind = kind.strip().lower()
        if kind not in KINDS:
            raise SchemaError(f"schema config line {lineno}: unknown kind {kind!r}")
        kinds[key] = (kind, [s.strip() for s in labels.split(",") if s.strip()])
    return {"kinds": kinds, "target": target, "image_shape": image_shape}


def load_schema_config(path) -> dict:
    return parse_schema_config(Path(path).read_text(encoding="utf-8"))


def load_csv(path, schema_config: dict) -> Dataset:
    """Read a headed UTF-8 CSV; empty cells become missing, categoricals become indices."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = list(enumerate(reader, start=2))
    kinds = schema_config["kinds"]
    missing_cols = [h for h in header if h not in kinds]
    if missing_cols:
        raise SchemaError(f"{path}: columns without a declared kind: {missing_cols}")

    features = [Feature(h, kinds[h][0], list(kinds[h][1])) for h in header]
    fixed = [bool(kinds[h][1]) for h in header]
    values = np.full((len(rows), len(header)), np.nan)
    for r, (lineno, row) in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                continue
            feat = features[j]
            if feat.kind == REAL:
                try:
                    values[r, j] = float(cell)
                except ValueError:
                    raise SchemaError(f"{path}: line {lineno}, column {feat.name!r}: cannot parse {cell!r}") from None
            elif feat.kind == BINARY:
                if cell not in ("0", "1", "0.0", "1.0"):
                    raise SchemaError(f"{path}: line {lineno}, column {feat.name!r}: binary cell {cell!r}")
                values[r, j] = float(cell)
            else:
                if cell not in feat.labels:
                    if fixed[j]:
                        raise SchemaError(f"{path}: line {lineno}, column {feat.name!r}: unknown label {cell!r}")
                    feat.labels.append(cell)
                values[r, j] = feat.labels.index(cell)

    target = schema_config.get("target")
    if target is not None and target not in header:
        raise SchemaError(f"{path}: target column {target!r} not in header")
    schema = FeatureSchema(features, header.index(target) if target else None)
    meta = {}
    shape = schema_config.get("image_shape")
    if shape is not None:
        if int(np.prod(shape)) != len(header):
            raise SchemaError(f"{path}: image shape {shape} does not match {len(header)} columns")
        meta["image_shape"] = tuple(shape)
    return Dataset(schema.validate(), values, meta)


def format_cell(feature: Feature, value: float) -> str:
    if np.isnan(value):
        return ""
    if feature.kind == CATEGORICAL:
        return feature.labels[int(value)]
    if feature.kind == BINARY:
        return str(int(value))
    return repr(float(value))


def write_csv(dataset: Dataset, path, extra_columns: dict[str, np.ndarray] | None = None) -> None:
    extra_columns = extra_columns or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(extra_columns) + dataset.schema.names)
        for i, row in enumerate(dataset.values):
            prefix = [str(col[i]) for col in extra_columns.values()]
            writer.writerow(prefix + [format_cell(f, v) for f, v in zip(dataset.schema.features, row)])


def schema_config_text(schema: FeatureSchema, image_shape=None) -> str:
    lines = []
    for f in schema.features:
        lines.append(f"{f.name} = {f.kind}" + (": " + ", ".join(f.labels) if f.kind == CATEGORICAL else ""))
    if schema.target is not None:
        lines.append(f"{TARGET_KEY} = {schema.features[schema.target].name}")
    if image_shape is not None:
        lines.append(f"{IMAGE_SHAPE_KEY} = {'x'.join(str(s) for s in image_shape)}")
    return "\n".join(lines) + "\n"


# --- transforms -------------------------------------------------------------

def normalize(dataset: Dataset) -> Dataset:
    """Standardize real features with population mean/std over observed cells."""
    values = dataset.values.copy()
    features = []
    for j, f in enumerate(dataset.schema.features):
        if f.kind != REAL:
            features.append(replace(f))
            continue
        col = values[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            raise SchemaError(f"real feature {f.name!r} has no observed values")
        mu, sd = float(observed.mean()), float(observed.std())
        if not sd > 0:
            raise SchemaError(f"real feature {f.name!r} is constant")
        values[:, j] = (col - mu) / sd
        features.append(replace(f, mean=mu, std=sd))
    schema = FeatureSchema(features, dataset.schema.target)
    return Dataset(schema, values, dict(dataset.meta))


def apply_normalization(values: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    for j in schema.indices(REAL):
        f = schema.features[j]
        out[..., j] = (out[..., j] - f.mean) / f.std
    return out


def denormalize(values: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    for j in schema.indices(REAL):
        f = schema.features[j]
        out[..., j] = out[..., j] * f.std + f.mean
    return out


def corrupt(dataset: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    """Independently replace each non-target cell by the missing marker with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    values = dataset.values.copy()
    drop = rng.random(values.shape) < rate
    if dataset.schema.target is not None:
        drop[:, dataset.schema.target] = False
    values[drop] = np.nan
    return Dataset(dataset.schema, values, dict(dataset.meta))


def train_test_split(dataset: Dataset, rng: np.random.Generator, train_fraction: float = 0.75) -> tuple[Dataset, Dataset]:
    order = rng.permutation(len(dataset))
    cut = int(round(train_fraction * len(dataset)))
    return dataset.subset(order[:cut]), dataset.subset(order[cut:])


# --- synthetic data ---------------------------------------------------------

def synth_mixture(
    n: int = 100_000,
    rng: np.random.Generator | None = None,
    n_components: int = 8,
    component_std: float = 0.1,
    dim: int = 2,
) -> Dataset:
    """Equal-weight Gaussian mixture with standard-normal component means.

    The component means are drawn first from ``rng``, so one seed fixes both
    the mixture and the sample. ``meta`` carries the means and labels.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    means = rng.normal(size=(n_components, dim))
    comp = rng.integers(0, n_components, size=n)
    x = means[comp] + component_std * rng.normal(size=(n, dim))
    meta = {"component_means": means, "component": comp, "component_std": component_std}
    return Dataset(FeatureSchema.all_real(dim), x, meta)


def mixture_log_density(x: np.ndarray, means: np.ndarray, std: float, dims=None) -> np.ndarray:
    """Exact log-density of the equal-weight isotropic mixture, optionally marginal over ``dims``."""
    from scipy.special import logsumexp

    x = np.atleast_2d(x)
    if dims is not None:
        x, means = x[:, dims], means[:, dims]
    d = x.shape[1]
    sq = ((x[:, None, :] - means[None]) ** 2).sum(-1)
    comp = -0.5 * sq / std**2 - d * np.log(std) - 0.5 * d * np.log(2 * np.pi)
    return logsumexp(comp, axis=1) - np.log(len(means))


# --- IDX --------------------------------------------------------------------

def _open_maybe_gz(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Raw ``(n, rows, cols)`` uint8 pixels from an IDX3 file (optionally gzipped)."""
    with _open_maybe_gz(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"{path}: bad IDX image magic 0x{magic:08x}")
        payload = fh.read()
    need = count * rows * cols
    if len(payload) < need:
        raise ValueError(f"{path}: truncated IDX payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"{path}: bad IDX label magic 0x{magic:08x}")
        payload = fh.read()
    if len(payload) < count:
        raise ValueError(f"{path}: truncated IDX payload")
    return np.frombuffer(payload[:count], dtype=np.uint8).copy()


def write_idx_images(images: np.ndarray, path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def binarize(images: np.ndarray, max_value: float = 255.0) -> np.ndarray:
    return (np.asarray(images, dtype=float) >= 0.5 * max_value).astype(float)


def load_idx_images(path, limit: int | None = None) -> Dataset:
    """Binarized image dataset, one Bernoulli feature per pixel."""
    images = read_idx_images(path)
    if limit is not None:
        images = images[:limit]
    n, rows, cols = images.shape
    values = binarize(images).reshape(n, rows * cols)
    return Dataset(FeatureSchema.all_binary(rows * cols), values, {"image_shape": (rows, cols)})


# --- tabular surrogate --------------------------------------------------------

WINE_COLUMNS = (
    "fixed_acidity", "volatile_acidity", "citric_acid", "residual_sugar", "chlorides",
    "free_sulfur_dioxide", "total_sulfur_dioxide", "density", "pH", "sulphates", "alcohol", "quality",
)
# Marginal mean and std of the white-wine quality table; "log" marks right-skewed columns.
_WINE_MARGINALS = (
    (6.855, 0.8438, "normal"), (0.2782, 0.1008, "log"), (0.3342, 0.1210, "normal"),
    (6.391, 5.072, "log"), (0.04577, 0.02185, "log"), (35.31, 17.01, "log"),
    (138.4, 42.50, "normal"), (0.99403, 0.002991, "normal"), (3.188, 0.1510, "normal"),
    (0.4898, 0.1141, "log"), (10.51, 1.231, "normal"), (5.878, 0.8856, "normal"),
)
# Upper triangle of the pairwise correlation matrix, row by row.
_WINE_CORR_UPPER = (
    -0.02, 0.29, 0.09, 0.02, -0.05, 0.09, 0.27, -0.43, -0.02, -0.12, -0.11,
    -0.15, 0.06, 0.07, -0.10, 0.09, 0.03, -0.03, -0.04, 0.07, -0.19,
    0.09, 0.11, 0.09, 0.12, 0.15, -0.16, 0.06, -0.08, -0.01,
    0.09, 0.30, 0.40, 0.84, -0.19, -0.03, -0.45, -0.10,
    0.10, 0.20, 0.26, -0.09, 0.02, -0.36, -0.21,
    0.62, 0.29, 0.00, 0.06, -0.25, 0.01,
    0.53, 0.00, 0.13, -0.45, -0.17,
    -0.09, 0.07, -0.78, -0.31,
    0.16, 0.12, 0.10,
    -0.02, 0.05,
    0.44,
)
_WINE_QUALITY_COUNTS = {3: 20, 4: 163, 5: 1457, 6: 2198, 7: 880, 8: 175, 9: 5}


def wine_correlation() -> np.ndarray:
    """Nearest positive-definite version of the tabulated correlation matrix."""
    d = len(WINE_COLUMNS)
    corr = np.eye(d)
    corr[np.triu_indices(d, 1)] = _WINE_CORR_UPPER
    corr = corr + corr.T - np.eye(d)
    vals, vecs = np.linalg.eigh(corr)
    corr = (vecs * np.maximum(vals, 1e-3)) @ vecs.T
    scale = np.sqrt(np.diag(corr))
    return corr / np.outer(scale, scale)


def wine_surrogate(n: int = 4898, rng: np.random.Generator | None = None) -> Dataset:
    """Gaussian-copula stand-in for the white-wine quality table.

    Matches the published per-column mean/std, the pairwise correlation pattern
    (in the latent Gaussian space), right skew for the concentration columns and
    the integer quality histogram. ``quality`` is the (real-valued) target.
    """
    from scipy.stats import norm

    rng = rng if rng is not None else np.random.default_rng(0)
    corr = wine_correlation()
    g = rng.multivariate_normal(np.zeros(len(corr)), corr, size=n)
    values = np.empty_like(g)
    for j, (mean, std, shape) in enumerate(_WINE_MARGINALS[:-1]):
        if shape == "log":
            s2 = np.log1p((std / mean) ** 2)
            values[:, j] = np.exp(np.log(mean) - 0.5 * s2 + np.sqrt(s2) * g[:, j])
        else:
            values[:, j] = mean + std * g[:, j]
    grades = np.array(sorted(_WINE_QUALITY_COUNTS))
    cum = np.cumsum([_WINE_QUALITY_COUNTS[q] for q in grades]) / sum(_WINE_QUALITY_COUNTS.values())
    values[:, -1] = grades[np.searchsorted(cum, norm.cdf(g[:, -1]))]
    schema = FeatureSchema([Feature(name, REAL) for name in WINE_COLUMNS], target=len(WINE_COLUMNS) - 1)
    return Dataset(schema, values, {"latent_correlation": corr})
