"""The arbitrary-conditioning VAE: prior, proposal and generative networks,
the VLB / GSNN / hybrid objectives, training, sampling and likelihood estimators.

Functions whose names end in ``_forward`` or that compute objectives work on
*normalized* feature values (the model's internal units). The user-facing
``conditional_sample`` / ``log_lik_*`` take values in original units.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteError, Tensor
from .config import TrainConfig
from .data import REAL, Dataset, FeatureSchema, apply_normalization, denormalize, normalize
from .distributions import GaussianParams, gaussian_kl, gaussian_log_prob, reparam_sample
from .masks import MaskSpec, force_missing, make_sampler
from .nets import Encoder, OutputLayout, init_mlp, mlp

log = logging.getLogger(__name__)

GROUPS = ("prior", "proposal", "generative")
EVAL_CHUNK = 20_000


class MaskContractError(ValueError):
    """A missing cell is marked observed."""


def seed_streams(seed: int, *names: str) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


class VaeacModel:
    kind = "vaeac"

    def __init__(self, schema: FeatureSchema, config: TrainConfig, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.schema = schema
        self.config = config
        self.encoder = Encoder(schema)
        self.layout = OutputLayout(schema, learned_sigma=config.real_sigma == "learned")
        d, D, E = config.latent_dim, len(schema), self.encoder.width
        hidden = list(config.hidden)
        gen_in = d + (E + D if config.use_skip else 0)
        self.sizes = {
            "prior": [E + D, *hidden, 2 * d],
            "proposal": [E + 2 * D, *hidden, 2 * d],
            "generative": [gen_in, *hidden, self.layout.width],
        }
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(config.seed)
            params = {g: init_mlp(self.sizes[g], rng) for g in GROUPS}
        self.params = params
        self._check_params()

    def _check_params(self):
        for g in GROUPS:
            sizes = self.sizes[g]
            expected = [s for a, b in zip(sizes[:-1], sizes[1:]) for s in ((a, b), (b,))]
            got = [p.shape for p in self.params[g]]
            if got != expected:
                raise ad.ShapeError(f"{g} network parameter shapes {got} do not match {expected}")

    def flat_params(self) -> list[np.ndarray]:
        return [p for g in GROUPS for p in self.params[g]]

    def tensors(self, requires_grad: bool = False) -> dict[str, list[Tensor]]:
        return {g: [Tensor(p, requires_grad=requires_grad) for p in self.params[g]] for g in GROUPS}

    def copy(self) -> "VaeacModel":
        return VaeacModel(self.schema, self.config, copy.deepcopy(self.params))

    def cast(self, dtype) -> "VaeacModel":
        """A copy with every parameter array converted to ``dtype``."""
        return VaeacModel(self.schema, self.config, {g: [p.astype(dtype) for p in v] for g, v in self.params.items()})


def _p(model, P):
    return P if P is not None else {g: model.params[g] for g in GROUPS}


def _check_shapes(model, x, b):
    if x.ndim != 2 or x.shape[1] != len(model.schema) or b.shape != x.shape:
        raise ad.ShapeError(f"expected (n, {len(model.schema)}) inputs, got x {x.shape}, b {b.shape}")


# --- networks ---------------------------------------------------------------

def prior_forward(model: VaeacModel, x: np.ndarray, b: np.ndarray, P=None) -> GaussianParams:
    """Prior over z given the observed part ``x * (1 - b)`` and the mask."""
    x, b = np.atleast_2d(x), np.atleast_2d(b).astype(float)
    _check_shapes(model, x, b)
    inp = np.concatenate([model.encoder.encode(x, b), b], axis=1)
    return GaussianParams.from_raw(mlp(_p(model, P)["prior"], inp))


def proposal_forward(model: VaeacModel, x: np.ndarray, b: np.ndarray, m: np.ndarray, P=None) -> GaussianParams:
    """Proposal over z given the full object, the unobserved mask and the missing mask."""
    x, b, m = np.atleast_2d(x), np.atleast_2d(b).astype(float), np.atleast_2d(m).astype(float)
    _check_shapes(model, x, b)
    if np.any((m > 0.5) & (b < 0.5)):
        raise MaskContractError("missing features must be unobserved (m_i = 1 requires b_i = 1)")
    inp = np.concatenate([model.encoder.encode(x, m), b, m], axis=1)
    return GaussianParams.from_raw(mlp(_p(model, P)["proposal"], inp))


def generative_forward(model: VaeacModel, z, x: np.ndarray, b: np.ndarray, P=None) -> Tensor:
    """Raw per-feature distribution parameters; see :class:`OutputLayout`."""
    z = ad.as_tensor(z)
    if z.shape[-1] != model.config.latent_dim:
        raise ad.ShapeError(f"latent has width {z.shape[-1]}, model expects {model.config.latent_dim}")
    if model.config.use_skip:
        x, b = np.atleast_2d(x), np.atleast_2d(b).astype(float)
        skip = np.concatenate([model.encoder.encode(x, b), b], axis=1)
        inp = ad.concat([z, skip], axis=1)
    else:
        inp = z
    return mlp(_p(model, P)["generative"], inp)


def reconstruction_log_prob(model: VaeacModel, out: Tensor, x: np.ndarray, b: np.ndarray, m: np.ndarray | None = None) -> Tensor:
    """Sum of log-densities over features that are unobserved and not missing."""
    x = np.atleast_2d(x)
    m = np.isnan(x) if m is None else np.atleast_2d(m)
    weights = np.atleast_2d(b).astype(float) * (1.0 - m)
    return model.layout.weighted_sum(out, x, weights)


def prior_regularizer(model: VaeacModel, prior: GaussianParams) -> Tensor:
    """Normal-Gamma penalty on prior parameters, summed over latent dimensions."""
    cfg = model.config
    mu_term = ad.square(prior.mu) * (-0.5 / cfg.sigma_mu**2)
    sigma_term = (ad.log(prior.sigma) - prior.sigma) * cfg.sigma_sigma
    return ad.sum_(mu_term + sigma_term, axis=-1)


# --- objectives -------------------------------------------------------------

@dataclass
class VlbTerms:
    reconstruction: Tensor
    kl: Tensor
    regularizer: Tensor
    kl_weight: float = 1.0

    @property
    def total(self) -> Tensor:
        kl = self.kl if self.kl_weight == 1.0 else self.kl * self.kl_weight
        return self.reconstruction - kl + self.regularizer

    def breakdown(self) -> str:
        return (f"reconstruction={self.reconstruction.data.mean():.6g} "
                f"kl={self.kl.data.mean():.6g} regularizer={self.regularizer.data.mean():.6g}")


def vlb_terms(model, x, b, m, epsilon, P=None, prior: GaussianParams | None = None) -> VlbTerms:
    x = np.atleast_2d(x)
    prior = prior if prior is not None else prior_forward(model, x, b, P)
    proposal = proposal_forward(model, x, b, m, P)
    z = reparam_sample(proposal, np.reshape(epsilon, proposal.mu.shape))
    out = generative_forward(model, z, x, b, P)
    rec = reconstruction_log_prob(model, out, x, b, m)
    return VlbTerms(rec, gaussian_kl(proposal, prior), prior_regularizer(model, prior))


def vaeac_vlb(model, x, b, m, epsilon, P=None) -> Tensor:
    """Single-sample VLB of log p(x_b | x_{1-b}, b) plus the prior regularizer, per row."""
    terms = vlb_terms(model, x, b, m, epsilon, P)
    total = terms.total
    if not np.all(np.isfinite(total.data)):
        raise NonFiniteError("non-finite VLB: " + terms.breakdown())
    return total


def gsnn_objective(model, x, b, m, epsilon, P=None, prior: GaussianParams | None = None) -> Tensor:
    """Reconstruction log-probability at a latent drawn from the prior; no proposal."""
    x = np.atleast_2d(x)
    prior = prior if prior is not None else prior_forward(model, x, b, P)
    z = reparam_sample(prior, np.reshape(epsilon, prior.mu.shape))
    out = generative_forward(model, z, x, b, P)
    rec = reconstruction_log_prob(model, out, x, b, m)
    if not np.all(np.isfinite(rec.data)):
        raise NonFiniteError("non-finite GSNN objective")
    return rec


def hybrid_objective(model, x, b, m, alpha: float, rng: np.random.Generator, P=None,
                     kl_weight: float = 1.0) -> Tensor:
    """``alpha * VLB + (1 - alpha) * GSNN`` with independent noise for the two terms.

    ``kl_weight`` scales the KL term of the VLB during warm-up; at 1.0 the
    objective is the plain hybrid bound.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.atleast_2d(x)
    shape = (x.shape[0], model.config.latent_dim)
    eps_vlb = rng.standard_normal(shape)
    eps_gsnn = rng.standard_normal(shape)
    prior = prior_forward(model, x, b, P)
    total = None
    if alpha > 0.0:
        terms = vlb_terms(model, x, b, m, eps_vlb, P, prior=prior)
        terms.kl_weight = kl_weight
        vlb = terms.total
        if not np.all(np.isfinite(vlb.data)):
            raise NonFiniteError("non-finite VLB: " + terms.breakdown())
        total = vlb if alpha == 1.0 else vlb * alpha
    if alpha < 1.0:
        gsnn = gsnn_objective(model, x, b, m, eps_gsnn, P, prior=prior)
        gsnn = gsnn if alpha == 0.0 else gsnn * (1.0 - alpha)
        total = gsnn if total is None else total + gsnn
    return total


# --- estimators -------------------------------------------------------------

def _prepare(model: VaeacModel, x_raw, b):
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
    b = force_missing(np.atleast_2d(np.asarray(b, dtype=float)), x_raw)
    x = apply_normalization(x_raw, model.schema)
    return x_raw, x, b, np.isnan(x).astype(float)


def _jacobian(model: VaeacModel, b, m) -> np.ndarray:
    """log|dx_norm/dx| over the scored real features (converts densities to original units)."""
    stds = np.array([f.std if f.kind == REAL else 1.0 for f in model.schema.features])
    return -((b * (1.0 - m)) * np.log(stds)).sum(axis=1)


def _log_weights(model: VaeacModel, x, b, m, S: int, rng, importance: bool) -> np.ndarray:
    n, d = x.shape[0], model.config.latent_dim
    prior = prior_forward(model, x, b)
    pmu, psig = prior.mu.data, prior.sigma.data
    if importance:
        q = proposal_forward(model, x, b, m)
        mu, sig = q.mu.data, q.sigma.data
    else:
        mu, sig = pmu, psig
    eps = rng.standard_normal((n, S, d))
    z = mu[:, None] + sig[:, None] * eps
    rep = lambda a: np.repeat(a, S, axis=0)
    out = generative_forward(model, z.reshape(n * S, d), rep(x), rep(b))
    lw = reconstruction_log_prob(model, out, rep(x), rep(b), rep(m)).data.reshape(n, S)
    if importance:
        zf = z.reshape(n * S, d)
        lw = lw + gaussian_log_prob(zf, GaussianParams(rep(pmu), rep(psig))).data.reshape(n, S)
        lw = lw - gaussian_log_prob(zf, GaussianParams(rep(mu), rep(sig))).data.reshape(n, S)
    return lw


def _estimate(model, x_raw, b, S, rng, importance) -> np.ndarray:
    if S < 1:
        raise ValueError("S must be >= 1")
    _, x, b, m = _prepare(model, x_raw, b)
    rows = max(1, EVAL_CHUNK // S)
    out = []
    for start in range(0, len(x), rows):
        sl = slice(start, start + rows)
        lw = _log_weights(model, x[sl], b[sl], m[sl], S, rng, importance)
        out.append(logsumexp(lw, axis=1) - np.log(S))
    ll = np.concatenate(out) if out else np.zeros(0)
    return ll + _jacobian(model, b, m)


def log_lik_is(model: VaeacModel, x, b, S: int, rng: np.random.Generator) -> np.ndarray:
    """Importance-sampled log p(x_b | x_{1-b}, b) per row, latents from the proposal."""
    return _estimate(model, x, b, S, rng, importance=True)


def log_lik_mc(model: VaeacModel, x, b, S: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo log p(x_b | x_{1-b}, b) per row, latents from the prior."""
    return _estimate(model, x, b, S, rng, importance=False)


# --- sampling ---------------------------------------------------------------

def conditional_sample(model: VaeacModel, x, b, n: int, rng: np.random.Generator, point: bool = False) -> np.ndarray:
    """``(rows, n, D)`` completions; observed cells are copied from ``x`` verbatim.

    ``point=True`` skips the observation noise for reals (returns the generative
    mean) and returns probabilities for binary features.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x_raw, x, b, _ = _prepare(model, x, b)
    rows, D, d = x.shape[0], x.shape[1], model.config.latent_dim
    result = np.repeat(x_raw[:, None, :], n, axis=1)
    chunk = max(1, EVAL_CHUNK // n)
    for start in range(0, rows, chunk):
        sl = slice(start, start + chunk)
        xs, bs = x[sl], b[sl]
        k = xs.shape[0]
        if not bs.any():
            continue
        prior = prior_forward(model, xs, bs)
        z = prior.mu.data[:, None] + prior.sigma.data[:, None] * rng.standard_normal((k, n, d))
        out = generative_forward(model, z.reshape(k * n, d), np.repeat(xs, n, axis=0), np.repeat(bs, n, axis=0))
        draws = denormalize(model.layout.sample(out.data, rng, point=point), model.schema).reshape(k, n, D)
        hidden = np.repeat(bs[:, None, :] > 0.5, n, axis=1)
        result[sl] = np.where(hidden, draws, result[sl])
    return result


# --- training ---------------------------------------------------------------

@dataclass
class Checkpoint:
    model: object
    mask: str
    best_epoch: int = -1
    history: list[dict] = field(default_factory=list)
    image_shape: tuple[int, int] | None = None

    @property
    def kind(self) -> str:
        return self.model.kind


def validation_score(model: VaeacModel, x_norm, b, S, rng) -> float:
    """Mean IS log-likelihood in model units (GSNN-only models use the MC estimator)."""
    m = np.isnan(x_norm).astype(float)
    importance = model.config.alpha > 0
    lw = np.concatenate([
        _log_weights(model, x_norm[i:i + 2000], b[i:i + 2000], m[i:i + 2000], S, rng, importance)
        for i in range(0, len(x_norm), 2000)
    ])
    return float(np.mean(logsumexp(lw, axis=1) - np.log(S)))


def prepare_training_data(dataset: Dataset, config: TrainConfig) -> Dataset:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.normalize:
        return normalize(dataset)
    return dataset


def split_validation(n: int, config: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if n > 1 else 0
    val, train = order[:n_val], order[n_val:]
    if len(train) == 0:
        train = val
    return train, val[: config.val_max_rows]


def train(dataset: Dataset, mask_spec, config: TrainConfig, callback=None) -> Checkpoint:
    """Maximize the hybrid objective with Adam; keep the best-validation epoch."""
    with ad.precision(config.dtype):
        ckpt = _train(dataset, mask_spec, config, callback)
    ckpt.model = ckpt.model.cast(np.float64)
    return ckpt


def _train(dataset: Dataset, mask_spec, config: TrainConfig, callback=None) -> Checkpoint:
    spec = mask_spec if isinstance(mask_spec, MaskSpec) else MaskSpec.parse(mask_spec)
    data = prepare_training_data(dataset, config)
    streams = seed_streams(config.seed, "init", "split", "mask", "noise", "shuffle", "val")
    model = VaeacModel(data.schema, config, rng=streams["init"]).cast(config.dtype)
    D = len(data.schema)
    sampler = make_sampler(spec, D, data.meta.get("image_shape"), rng=streams["mask"])
    train_idx, val_idx = split_validation(len(data), config, streams["split"])
    x_train, x_val = data.values[train_idx], data.values[val_idx]
    b_val = sampler(x_val, streams["val"])
    val_seed = int(streams["val"].integers(2**32))

    state = AdamState(lr=config.lr)
    best, best_score, history = model.copy(), -np.inf, []
    best_epoch = -1
    warmup_steps = config.kl_warmup * -(-len(x_train) // config.batch_size)
    step = 0
    for epoch in range(config.epochs):
        state.lr = config.lr * config.lr_decay**epoch
        order = streams["shuffle"].permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            step += 1
            kl_weight = min(1.0, step / warmup_steps) if warmup_steps else 1.0
            xb = x_train[order[start:start + config.batch_size]]
            bb = sampler(xb, streams["mask"])
            mb = np.isnan(xb).astype(float)
            P = model.tensors(requires_grad=True)
            objective = hybrid_objective(model, xb, bb, mb, config.alpha, streams["noise"], P, kl_weight)
            loss = -ad.mean(objective)
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}")
            leaves = [t for g in GROUPS for t in P[g]]
            grads = ad.grad(loss, leaves)
            ad.adam_step(model.flat_params(), grads, state)
            losses.append(loss.item())
        score = validation_score(model, x_val, b_val, config.val_samples, np.random.default_rng(val_seed))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loglik": score}
        history.append(record)
        log.info("epoch %d train_loss %.5f val_loglik %.5f", epoch, record["train_loss"], score)
        if callback is not None:
            callback(record, model)
        if score > best_score or not np.isfinite(best_score):
            best, best_score, best_epoch = model.copy(), score, epoch
    return Checkpoint(best, str(spec), best_epoch, history, data.meta.get("image_shape"))
