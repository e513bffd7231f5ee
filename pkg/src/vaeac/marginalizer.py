"""Universal Marginalizer baseline: one feed-forward net predicting every
per-feature marginal p(x_i | x_{1-b}, b), composed by the chain rule."""
from __future__ import annotations

import copy
import logging

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteError, Tensor
from .config import TrainConfig
from .data import REAL, Dataset, FeatureSchema, apply_normalization, denormalize
from .masks import MaskSpec, force_missing, make_sampler, um_mask_transform
from .model import Checkpoint, prepare_training_data, seed_streams, split_validation
from .nets import Encoder, OutputLayout, init_mlp, mlp

log = logging.getLogger(__name__)


class UmModel:
    kind = "um"

    def __init__(self, schema: FeatureSchema, config: TrainConfig, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.schema = schema
        self.config = config
        self.encoder = Encoder(schema)
        self.layout = OutputLayout(schema, learned_sigma=True)
        self.sizes = [self.encoder.width + len(schema), *config.hidden, self.layout.width]
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(config.seed)
            params = {"net": init_mlp(self.sizes, rng)}
        self.params = params
        expected = [s for a, b in zip(self.sizes[:-1], self.sizes[1:]) for s in ((a, b), (b,))]
        if [p.shape for p in params["net"]] != expected:
            raise ad.ShapeError("marginalizer parameter shapes do not match the schema")
        self.forward_calls = 0

    def tensors(self, requires_grad: bool = False) -> dict[str, list[Tensor]]:
        return {"net": [Tensor(p, requires_grad=requires_grad) for p in self.params["net"]]}

    def copy(self) -> "UmModel":
        return UmModel(self.schema, self.config, copy.deepcopy(self.params))

    def cast(self, dtype) -> "UmModel":
        return UmModel(self.schema, self.config, {"net": [p.astype(dtype) for p in self.params["net"]]})


def um_forward(model: UmModel, x: np.ndarray, b: np.ndarray, P=None) -> Tensor:
    """Marginal parameters for every feature (normalized units); only b_i = 1 entries matter."""
    x, b = np.atleast_2d(x), np.atleast_2d(b).astype(float)
    if x.shape[1] != len(model.schema) or b.shape != x.shape:
        raise ad.ShapeError(f"expected (n, {len(model.schema)}) inputs, got x {x.shape}, b {b.shape}")
    model.forward_calls += 1
    params = P["net"] if P is not None else model.params["net"]
    inp = np.concatenate([model.encoder.encode(x, b), b], axis=1)
    return mlp(params, inp)


def um_objective(model: UmModel, x, b, P=None) -> Tensor:
    """Per-row ``sum_i b_i log p(x_i | x_{1-b}, b)`` over non-missing features."""
    x = np.atleast_2d(x)
    weights = np.atleast_2d(b) * (1.0 - np.isnan(x))
    return model.layout.weighted_sum(um_forward(model, x, b, P), x, weights)


def training_masks(sampler, x, config: TrainConfig, rng) -> np.ndarray:
    b = sampler(x, rng)
    if config.mask_correction:
        b = um_mask_transform(b, rng)
    return force_missing(b, x)


def um_train(dataset: Dataset, mask_spec, config: TrainConfig, callback=None) -> Checkpoint:
    """Fit the marginalizer with Adam under thinned masks; keep the best-validation epoch."""
    with ad.precision(config.dtype):
        ckpt = _um_train(dataset, mask_spec, config, callback)
    ckpt.model = ckpt.model.cast(np.float64)
    return ckpt


def _um_train(dataset: Dataset, mask_spec, config: TrainConfig, callback=None) -> Checkpoint:
    spec = mask_spec if isinstance(mask_spec, MaskSpec) else MaskSpec.parse(mask_spec)
    data = prepare_training_data(dataset, config)
    streams = seed_streams(config.seed, "init", "split", "mask", "shuffle", "val")
    model = UmModel(data.schema, config, rng=streams["init"]).cast(config.dtype)
    sampler = make_sampler(spec, len(data.schema), data.meta.get("image_shape"), rng=streams["mask"])
    train_idx, val_idx = split_validation(len(data), config, streams["split"])
    x_train, x_val = data.values[train_idx], data.values[val_idx]
    b_val = training_masks(sampler, x_val, config, streams["val"])

    state = AdamState(lr=config.lr)
    best, best_score, best_epoch, history = model.copy(), -np.inf, -1, []
    for epoch in range(config.epochs):
        state.lr = config.lr * config.lr_decay**epoch
        order = streams["shuffle"].permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            xb = x_train[order[start:start + config.batch_size]]
            bb = training_masks(sampler, xb, config, streams["mask"])
            P = model.tensors(requires_grad=True)
            loss = -ad.mean(um_objective(model, xb, bb, P))
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite marginalizer loss at epoch {epoch}")
            grads = ad.grad(loss, P["net"])
            ad.adam_step(model.params["net"], grads, state)
            losses.append(loss.item())
        score = float(um_objective(model, x_val, b_val).data.mean())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loglik": score}
        history.append(record)
        log.info("epoch %d train_loss %.5f val_objective %.5f", epoch, record["train_loss"], score)
        if callback is not None:
            callback(record, model)
        if score > best_score or not np.isfinite(best_score):
            best, best_score, best_epoch = model.copy(), score, epoch
    return Checkpoint(best, str(spec), best_epoch, history, data.meta.get("image_shape"))


def _random_orders(b: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly random visiting order of each row's unobserved features."""
    keys = rng.random(b.shape)
    keys[b < 0.5] = np.inf
    return np.argsort(keys, axis=1, kind="stable"), (b > 0.5).sum(axis=1)


def um_chain_sample(model: UmModel, x, b, rng: np.random.Generator) -> np.ndarray:
    """Complete each row by sampling its unobserved features one at a time in random order.

    A single row costs exactly ``|b|`` forward passes.
    """
    x_raw = np.atleast_2d(np.asarray(x, dtype=float))
    b = force_missing(np.atleast_2d(np.asarray(b, dtype=float)), x_raw)
    x_cur = apply_normalization(x_raw, model.schema)
    b_cur = b.copy()
    order, counts = _random_orders(b, rng)
    rows_all = np.arange(len(x_cur))
    for step in range(int(counts.max(initial=0))):
        rows = rows_all[counts > step]
        feats = order[rows, step]
        out = um_forward(model, x_cur[rows], b_cur[rows]).data
        draws = model.layout.sample(out, rng)
        x_cur[rows, feats] = draws[np.arange(len(rows)), feats]
        b_cur[rows, feats] = 0.0
    result = denormalize(x_cur, model.schema)
    return np.where(b > 0.5, result, x_raw)


def chain_log_lik(model: UmModel, x, b, orders: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Chain-rule log-likelihood per row for explicit visiting orders (normalized-unit input)."""
    x = np.atleast_2d(x)
    b_cur = np.atleast_2d(b).astype(float).copy()
    total = np.zeros(len(x))
    rows_all = np.arange(len(x))
    for step in range(int(counts.max(initial=0))):
        rows = rows_all[counts > step]
        feats = orders[rows, step]
        out = um_forward(model, x[rows], b_cur[rows])
        lp = model.layout.log_prob_matrix(out, x[rows])
        total[rows] += lp[np.arange(len(rows)), feats]
        b_cur[rows, feats] = 0.0
    return total


def _scored(x_raw, b):
    return (b > 0.5) & ~np.isnan(x_raw)


def _jacobian(model: UmModel, scored: np.ndarray) -> np.ndarray:
    stds = np.array([f.std if f.kind == REAL else 1.0 for f in model.schema.features])
    return -(scored * np.log(stds)).sum(axis=1)


def um_chain_log_lik(model: UmModel, x, b, permutation) -> float:
    """log p(x_b | x_{1-b}, b) for one instance under a fixed visiting order.

    ``permutation`` must list exactly the unobserved, non-missing features;
    missing features stay unobserved throughout and are marginalized out.
    """
    x_raw = np.asarray(x, dtype=float).reshape(1, -1)
    b = force_missing(np.asarray(b, dtype=float).reshape(1, -1), x_raw)
    scored = _scored(x_raw, b)
    permutation = [int(i) for i in permutation]
    if sorted(permutation) != list(np.nonzero(scored[0])[0]):
        raise ValueError("permutation must be exactly the unobserved, non-missing feature indices")
    x_norm = apply_normalization(x_raw, model.schema)
    orders = np.array([permutation + [0] * (x_raw.shape[1] - len(permutation))])
    ll = chain_log_lik(model, x_norm, b, orders, np.array([len(permutation)]))
    return float(ll[0] + _jacobian(model, scored)[0])


def um_log_lik(model: UmModel, x, b, rng: np.random.Generator) -> np.ndarray:
    """Chain-rule log-likelihood per row with a uniformly random order per row."""
    x_raw = np.atleast_2d(np.asarray(x, dtype=float))
    b = force_missing(np.atleast_2d(np.asarray(b, dtype=float)), x_raw)
    scored = _scored(x_raw, b)
    orders, counts = _random_orders(scored.astype(float), rng)
    ll = chain_log_lik(model, apply_normalization(x_raw, model.schema), b, orders, counts)
    return ll + _jacobian(model, scored)
