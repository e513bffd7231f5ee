"""Metrics and evaluation protocols for imputation and inpainting."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import BINARY, CATEGORICAL, REAL, Dataset, FeatureSchema, corrupt, train_test_split
from .masks import force_missing

log = logging.getLogger(__name__)

PSNR_IDENTICAL = np.inf  # sentinel for a zero-error reconstruction
RIDGE_LAMBDA = 1e-6


class MetricError(ValueError):
    pass


def _discrete(schema: FeatureSchema) -> np.ndarray:
    return np.array([f.kind != REAL for f in schema.features], dtype=bool)


def combine(samples: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Collapse ``(rows, n, D)`` imputations to one value per cell.

    Reals are averaged; categorical and binary cells take the most frequent
    label, ties going to the lowest label index.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[:, None, :]
    if samples.shape[1] < 1:
        raise MetricError("need at least one imputation per row")
    out = samples.mean(axis=1)
    for j in np.nonzero(_discrete(schema))[0]:
        k = max(schema.features[j].n_categories, 1)
        col = samples[:, :, j]
        counts = np.zeros((col.shape[0], k))
        finite = ~np.isnan(col)
        rows = np.nonzero(finite)[0]
        np.add.at(counts, (rows, col[finite].astype(int)), 1.0)
        mode = counts.argmax(axis=1).astype(float)
        mode[~finite.any(axis=1)] = np.nan
        out[:, j] = mode
    return out


@dataclass
class ImputationResult:
    """n completions per test row, with the uncorrupted truth and the dropped-cell mask."""

    schema: FeatureSchema
    samples: np.ndarray  # (rows, n, D), original units
    truth: np.ndarray  # (rows, D)
    dropped: np.ndarray  # (rows, D) bool, cells whose value was removed
    combined: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[1] < 1:
            raise MetricError("samples must have shape (rows, n >= 1, D)")
        self.truth = np.asarray(self.truth, dtype=float)
        self.dropped = np.asarray(self.dropped, dtype=bool)
        if self.truth.shape != self.dropped.shape or self.truth.shape != (self.samples.shape[0], self.samples.shape[2]):
            raise MetricError("truth, dropped and samples disagree in shape")
        self.combined = combine(self.samples, self.schema)
        if np.isnan(self.combined[self.dropped]).any():
            raise MetricError("combined imputation undefined for a dropped cell")

    @property
    def n(self) -> int:
        return self.samples.shape[1]


def _scored_features(result: ImputationResult, kind_mask: np.ndarray) -> list[int]:
    feats = [j for j in np.nonzero(kind_mask)[0] if j != result.schema.target and result.dropped[:, j].any()]
    if not feats:
        raise MetricError("no dropped cells to score")
    return feats


def nrmse(result: ImputationResult, stds: np.ndarray | None = None) -> float:
    """Mean over real features of RMSE on dropped cells divided by the feature std.

    The default std is the population std of the uncorrupted truth column.
    """
    reals = np.array([f.kind == REAL for f in result.schema.features])
    feats = _scored_features(result, reals)
    scores = []
    for j in feats:
        cells = result.dropped[:, j]
        err = result.combined[cells, j] - result.truth[cells, j]
        sd = float(np.std(result.truth[:, j])) if stds is None else float(stds[j])
        if not sd > 0:
            raise MetricError(f"feature {result.schema.features[j].name!r} has zero std")
        scores.append(np.sqrt(np.mean(err**2)) / sd)
    return float(np.mean(scores))


def pfc(result: ImputationResult) -> float:
    """Mean over categorical features of the fraction of wrong imputations on dropped cells."""
    cats = _discrete(result.schema)
    feats = _scored_features(result, cats)
    return float(np.mean([
        np.mean(result.combined[result.dropped[:, j], j] != result.truth[result.dropped[:, j], j])
        for j in feats
    ]))


# --- downstream models ------------------------------------------------------

def design_matrix(values: np.ndarray, schema: FeatureSchema, exclude: int | None = None) -> np.ndarray:
    """Reals as-is, categoricals one-hot; ``exclude`` drops a column (the target)."""
    cols = []
    for j, f in enumerate(schema.features):
        if j == exclude:
            continue
        v = values[:, j]
        if f.kind == CATEGORICAL:
            cols.append(np.eye(f.n_categories)[v.astype(int)])
        else:
            cols.append(v[:, None])
    return np.concatenate(cols, axis=1) if cols else np.zeros((len(values), 0))


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA) -> np.ndarray:
    """Closed-form ridge with an unpenalized intercept; returns ``[intercept, weights...]``."""
    A = np.hstack([np.ones((len(X), 1)), X])
    reg = lam * np.eye(A.shape[1])
    reg[0, 0] = 0.0
    return np.linalg.solve(A.T @ A + reg, A.T @ y)


def ridge_predict(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    return w[0] + X @ w[1:]


def r2_score(y: np.ndarray, pred: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("degenerate target: zero variance")
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot


def downstream_eval(train_imputed: np.ndarray, test_imputed: np.ndarray, schema: FeatureSchema,
                    y_train: np.ndarray | None = None, y_test: np.ndarray | None = None) -> float:
    """Fit a linear (real target) or logistic (categorical target) model after imputation.

    ``train_imputed`` and ``test_imputed`` are ``(rows, n, D)``. The training
    set is expanded to all ``n`` completions; test predictions are made per
    completion and then combined (mean or most frequent). The target column is
    never used as an input. Returns R2 or accuracy.
    """
    t = schema.target
    if t is None:
        raise MetricError("schema has no target feature")
    train_imputed, test_imputed = np.asarray(train_imputed, float), np.asarray(test_imputed, float)
    if train_imputed.ndim == 2:
        train_imputed = train_imputed[:, None]
    if test_imputed.ndim == 2:
        test_imputed = test_imputed[:, None]
    rows_tr, n_tr, D = train_imputed.shape
    rows_te, n_te, _ = test_imputed.shape
    flat_tr = train_imputed.reshape(rows_tr * n_tr, D)
    y_fit = flat_tr[:, t] if y_train is None else np.repeat(np.asarray(y_train, float), n_tr)
    if y_test is None:
        raise MetricError("y_test is required: imputed targets are never scored")
    y_test = np.asarray(y_test, float)
    X_tr = design_matrix(flat_tr, schema, exclude=t)
    X_te = design_matrix(test_imputed.reshape(rows_te * n_te, D), schema, exclude=t)

    if schema.features[t].kind == REAL:
        if np.std(y_fit) == 0:
            raise MetricError("degenerate target: zero variance")
        pred = ridge_predict(ridge_fit(X_tr, y_fit), X_te).reshape(rows_te, n_te).mean(axis=1)
        return r2_score(y_test, pred)

    from sklearn.linear_model import LogisticRegression

    classes = np.unique(y_fit)
    if len(classes) < 2:
        raise MetricError("degenerate target: a single class")
    mu, sd = X_tr.mean(axis=0), X_tr.std(axis=0)
    sd[sd == 0] = 1.0
    clf = LogisticRegression(max_iter=2000)
    clf.fit((X_tr - mu) / sd, y_fit.astype(int))
    pred = clf.predict((X_te - mu) / sd).reshape(rows_te, n_te)
    k = max(schema.features[t].n_categories, int(pred.max()) + 1)
    votes = np.zeros((rows_te, k))
    np.add.at(votes, (np.repeat(np.arange(rows_te), n_te), pred.ravel()), 1.0)
    return float(np.mean(votes.argmax(axis=1) == y_test.astype(int)))


# --- inpainting metrics -----------------------------------------------------

def naive_bayes_rates(train_images: np.ndarray) -> np.ndarray:
    """Per-pixel Bernoulli rates with Laplace smoothing ``(count + 1) / (N + 2)``."""
    train_images = np.asarray(train_images, dtype=float)
    return (train_images.sum(axis=0) + 1.0) / (len(train_images) + 2.0)


def naive_bayes_nll_rows(train_images: np.ndarray, test_images: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-instance NLL of the unobserved pixels under independent per-pixel Bernoullis."""
    p = naive_bayes_rates(train_images)
    x = np.asarray(test_images, dtype=float)
    lp = np.where(x > 0.5, np.log(p), np.log1p(-p))
    return -(np.asarray(masks, dtype=float) * lp).sum(axis=1)


def naive_bayes_nll(train_images: np.ndarray, test_images: np.ndarray, masks: np.ndarray) -> float:
    return float(naive_bayes_nll_rows(train_images, test_images, masks).mean())


def psnr(reference: np.ndarray, candidate: np.ndarray, max_value: float = 1.0) -> float:
    """``10 log10(max^2 / MSE)`` over the whole image; identical images give ``inf``."""
    reference, candidate = np.asarray(reference, float), np.asarray(candidate, float)
    if reference.shape != candidate.shape:
        raise MetricError(f"shape mismatch {reference.shape} vs {candidate.shape}")
    mse = float(np.mean((reference - candidate) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(max_value**2 / mse))


def best_of_k_psnr(reference: np.ndarray, candidates, max_value: float = 1.0) -> float:
    candidates = list(candidates)
    if not candidates:
        raise MetricError("need at least one candidate")
    return max(psnr(reference, c, max_value) for c in candidates)


# --- reports ----------------------------------------------------------------

def summarize(values) -> tuple[float, float]:
    values = np.asarray(list(values), dtype=float)
    return float(values.mean()), float(values.std())


def write_metric_report(records: dict[tuple[str, str], list[float]], path) -> None:
    """CSV with columns metric, dataset, mean, std (std over repeats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "dataset", "mean", "std"])
        for (metric, dataset), values in records.items():
            mean, std = summarize(values)
            writer.writerow([metric, dataset, repr(mean), repr(std)])


def read_metric_report(path) -> dict[tuple[str, str], tuple[float, float]]:
    with open(path, newline="") as fh:
        return {(r["metric"], r["dataset"]): (float(r["mean"]), float(r["std"])) for r in csv.DictReader(fh)}


# --- imputation protocol ----------------------------------------------------

def impute_samples(ckpt, x: np.ndarray, b: np.ndarray, n: int, rng: np.random.Generator,
                   point: bool = False) -> np.ndarray:
    """``(rows, n, D)`` completions from either model kind.

    With ``point`` a vaeac imputes each real cell with the generative mean of
    one latent draw and each binary cell with its more likely value; the
    latent draw still varies across the ``n`` imputations.
    """
    if ckpt.kind == "um":
        from .marginalizer import um_chain_sample

        return np.stack([um_chain_sample(ckpt.model, x, b, rng) for _ in range(n)], axis=1)
    from .model import conditional_sample

    draws = conditional_sample(ckpt.model, x, b, n, rng, point=point)
    if point:
        binary = [j for j, f in enumerate(ckpt.model.schema.features) if f.kind == BINARY]
        hidden = np.asarray(b)[:, None, binary] > 0.5
        draws[:, :, binary] = np.where(hidden, (draws[:, :, binary] > 0.5).astype(float), draws[:, :, binary])
    return draws


def mean_imputation(train: Dataset, x: np.ndarray) -> np.ndarray:
    """Fill missing cells with the training mean (reals) or most frequent label."""
    fill = np.empty(len(train.schema))
    for j, f in enumerate(train.schema.features):
        col = train.values[:, j]
        col = col[~np.isnan(col)]
        fill[j] = col.mean() if f.kind == REAL else np.bincount(col.astype(int)).argmax()
    return np.where(np.isnan(x), fill, x)


@dataclass
class ImputationRun:
    """Metrics of one train/test split."""

    nrmse: float | None
    pfc: float | None
    downstream: float | None
    baseline_nrmse: float | None
    baseline_pfc: float | None


def _maybe(fn, *args):
    try:
        return fn(*args)
    except MetricError:
        return None


def imputation_experiment(dataset: Dataset, config: TrainConfig, mask_spec: str = "bernoulli:0.2",
                          drop_rate: float = 0.5, n_imputations: int = 10, seed: int = 0,
                          model_kind: str = "vaeac", downstream: bool = True, point: bool = True) -> ImputationRun:
    """One repeat of the tabular protocol.

    Split 3:1, drop ``drop_rate`` of the non-target cells in both parts, train
    on the corrupted training part, impute the test part with the target
    always unobserved, and score the dropped cells against the clean values.
    ``point`` selects mean imputations for a vaeac (see ``impute_samples``).
    """
    from .model import seed_streams, train
    from .marginalizer import um_train

    streams = seed_streams(seed, "split", "corrupt", "impute")
    train_clean, test_clean = train_test_split(dataset, streams["split"])
    train_ds = corrupt(train_clean, drop_rate, streams["corrupt"])
    test_ds = corrupt(test_clean, drop_rate, streams["corrupt"])
    fit = um_train if model_kind == "um" else train
    ckpt = fit(train_ds, mask_spec, config)

    schema = dataset.schema
    t = schema.target
    b_test = np.isnan(test_ds.values).astype(float)
    if t is not None:
        b_test[:, t] = 1.0
    x_test = test_ds.values.copy()
    if t is not None:
        x_test[:, t] = np.nan  # never conditions on the target
    samples = impute_samples(ckpt, x_test, b_test, n_imputations, streams["impute"], point)
    dropped = np.isnan(test_ds.values)
    result = ImputationResult(schema, samples, test_clean.values, dropped)
    baseline = ImputationResult(schema, mean_imputation(train_ds, test_ds.values)[:, None], test_clean.values, dropped)

    score = None
    if downstream and t is not None:
        b_train = force_missing(np.zeros_like(train_ds.values), train_ds.values)
        train_samples = impute_samples(ckpt, train_ds.values, b_train, n_imputations, streams["impute"], point)
        score = downstream_eval(train_samples, samples, schema, train_clean.values[:, t], test_clean.values[:, t])
    run = ImputationRun(_maybe(nrmse, result), _maybe(pfc, result), score,
                        _maybe(nrmse, baseline), _maybe(pfc, baseline))
    log.info("imputation run seed %d: %s", seed, run)
    return run


def imputation_benchmark(dataset: Dataset, name: str, config: TrainConfig, repeats: int = 5,
                         **kwargs) -> dict[tuple[str, str], list[float]]:
    """Repeat the protocol over ``repeats`` splits and collect metric lists for a report."""
    records: dict[tuple[str, str], list[float]] = {}
    for r in range(repeats):
        run = imputation_experiment(dataset, config.replace(seed=config.seed + r), seed=config.seed + r, **kwargs)
        for metric in ("nrmse", "pfc", "downstream", "baseline_nrmse", "baseline_pfc"):
            value = getattr(run, metric)
            if value is not None:
                records.setdefault((metric, name), []).append(value)
    return records
