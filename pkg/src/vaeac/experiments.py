"""Desk-scale experiments shared by the acceptance tests and the scripts in ``scripts/``.

Each function trains what it needs from an explicit seed and returns a small
result record; nothing here reads or writes files.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import marginalizer, model
from .config import TrainConfig
from .data import BINARY, Dataset, Feature, FeatureSchema, mixture_log_density, synth_mixture

# --- discrete toy for the marginalizer -------------------------------------------------

def random_joint_table(n_vars: int, rng: np.random.Generator) -> np.ndarray:
    """A random joint distribution over ``n_vars`` binary variables, shape ``(2,) * n_vars``."""
    p = rng.dirichlet(np.ones(2**n_vars))
    return p.reshape((2,) * n_vars)


def table_dataset(table: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
    d = table.ndim
    idx = rng.choice(table.size, size=n, p=table.ravel())
    x = np.array(np.unravel_index(idx, table.shape)).T.astype(float)
    schema = FeatureSchema([Feature(f"v{i}", BINARY) for i in range(d)])
    return Dataset(schema, x, {"table": table})


def all_queries(d: int):
    """Every (b, x_obs) pair with at least one unobserved variable; x_obs is a dict index -> value."""
    for b in itertools.product((0, 1), repeat=d):
        if sum(b) == 0:
            continue
        obs = [i for i in range(d) if b[i] == 0]
        for values in itertools.product((0, 1), repeat=len(obs)):
            yield np.array(b, dtype=float), dict(zip(obs, values))


def completions(b: np.ndarray, x_obs: dict) -> np.ndarray:
    """All full assignments that agree with ``x_obs``, one per row."""
    hidden = np.nonzero(b)[0]
    rows = []
    for values in itertools.product((0, 1), repeat=len(hidden)):
        x = np.zeros(len(b))
        for i, v in x_obs.items():
            x[i] = v
        x[hidden] = values
        rows.append(x)
    return np.array(rows)


def brute_force_conditional(table: np.ndarray, b: np.ndarray, x_obs: dict) -> np.ndarray:
    """p(x_b | x_obs) for every completion, in the order of :func:`completions`."""
    rows = completions(b, x_obs).astype(int)
    joint = table[tuple(rows.T)]
    return joint / joint.sum()


def um_conditional(um: marginalizer.UmModel, b: np.ndarray, x_obs: dict) -> np.ndarray:
    """The chain-rule conditional the sampler realizes: averaged over all visiting orders."""
    rows = completions(b, x_obs)
    hidden = [int(i) for i in np.nonzero(b)[0]]
    perms = list(itertools.permutations(hidden))
    probs = np.zeros(len(rows))
    for perm in perms:
        probs += np.exp([marginalizer.um_chain_log_lik(um, x, b, perm) for x in rows])
    return probs / len(perms)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class UmToyResult:
    worst_tv: float
    mean_tv: float
    mask_correction: bool
    table: np.ndarray = field(repr=False)
    checkpoint: object = field(repr=False, default=None)


UM_TOY_CONFIG = TrainConfig(epochs=20, batch_size=64, lr=3e-3, lr_decay=0.8, hidden=(64, 64), normalize=False)


def um_toy(seed: int = 0, mask_correction: bool = True, n_vars: int = 3, n: int = 20_000,
           mask_spec: str = "all", config: TrainConfig = UM_TOY_CONFIG) -> UmToyResult:
    """Fit the marginalizer to samples of a random binary joint table and audit every conditional.

    ``mask_spec`` is the raw training mask distribution p(b); with
    ``mask_correction`` the masks are thinned before every step.
    """
    streams = model.seed_streams(seed, "table", "data")
    table = random_joint_table(n_vars, streams["table"])
    ds = table_dataset(table, n, streams["data"])
    ck = marginalizer.um_train(ds, mask_spec, config.replace(mask_correction=mask_correction, seed=seed))
    tvs = [total_variation(brute_force_conditional(table, b, obs), um_conditional(ck.model, b, obs))
           for b, obs in all_queries(n_vars)]
    return UmToyResult(max(tvs), float(np.mean(tvs)), mask_correction, table, ck)


# --- two-mode toy: VAEAC vs GSNN -------------------------------------------------------

def bimodal_dataset(n: int, rng: np.random.Generator, modes=(-1.0, 1.0), std: float = 0.1) -> Dataset:
    """One real feature drawn from an equal mixture of narrow Gaussians."""
    centers = np.asarray(modes)[rng.integers(0, len(modes), n)]
    return Dataset(FeatureSchema.all_real(1), (centers + std * rng.normal(size=n))[:, None])


@dataclass
class ModeCoverage:
    alpha: float
    near_mode: dict  # mode -> fraction of samples within ``radius``
    sample_mean: float
    samples: np.ndarray = field(repr=False)


MODE_CONFIG = TrainConfig(epochs=20, batch_size=64, lr=2e-3, lr_decay=0.93, latent_dim=2, hidden=(64, 64),
                          real_sigma="learned", normalize=False)


def mode_coverage(alpha: float, seed: int = 0, n: int = 20_000, n_samples: int = 10_000, radius: float = 0.3,
                  config: TrainConfig = MODE_CONFIG) -> ModeCoverage:
    """Train on the two-mode toy and measure where unconditional samples land."""
    streams = model.seed_streams(seed, "data", "sample")
    ds = bimodal_dataset(n, streams["data"])
    ck = model.train(ds, "all", config.replace(alpha=alpha, seed=seed))
    x = np.full((n_samples, 1), np.nan)
    s = model.conditional_sample(ck.model, x, np.ones_like(x), 1, streams["sample"])[:, 0, 0]
    near = {m: float(np.mean(np.abs(s - m) <= radius)) for m in (-1.0, 1.0)}
    return ModeCoverage(alpha, near, float(s.mean()), s)


# --- synthetic mixture ---------------------------------------------------------------------

SYNTH_CONFIG = TrainConfig(epochs=40, batch_size=128, lr=2e-3, lr_decay=0.95, kl_warmup=3, latent_dim=25,
                           hidden=(400, 200, 100, 50), real_sigma="learned", normalize=False, dtype="float32")


@dataclass
class MixtureResult:
    alpha: float
    is_nll: float  # joint IS-S NLL per test point
    mc_nll: float
    true_nll: float  # exact NLL of the generating mixture on the same points
    checkpoint: object = field(repr=False, default=None)


def synthetic_mixture(alpha: float, seed: int = 0, n_train: int = 100_000, n_test: int = 2000, samples: int = 10,
                      mask_spec: str = "bernoulli:0.5", config: TrainConfig = SYNTH_CONFIG) -> MixtureResult:
    """Train on the two-dimensional Gaussian mixture and score the joint density of held-out points."""
    streams = model.seed_streams(seed, "data", "eval")
    full = synth_mixture(n_train + n_test, streams["data"])
    train_ds, test = full.subset(slice(0, n_train)), full.subset(slice(n_train, None))
    ck = model.train(train_ds, mask_spec, config.replace(alpha=alpha, seed=seed))
    b = np.ones_like(test.values)
    eval_seed = int(streams["eval"].integers(2**31))
    is_nll = -model.log_lik_is(ck.model, test.values, b, samples, np.random.default_rng(eval_seed)).mean()
    mc_nll = -model.log_lik_mc(ck.model, test.values, b, samples, np.random.default_rng(eval_seed)).mean()
    true_nll = -mixture_log_density(test.values, full.meta["component_means"], full.meta["component_std"]).mean()
    return MixtureResult(alpha, float(is_nll), float(mc_nll), float(true_nll), ck)


# --- binarized MNIST inpainting ---------------------------------------------------------

MNIST_CONFIG = TrainConfig(epochs=15, batch_size=64, lr=1e-3, latent_dim=16, hidden=(256,), normalize=False,
                           dtype="float32")


@dataclass
class InpaintingResult:
    is_nll: np.ndarray  # per test image
    mc_nll: np.ndarray
    naive_bayes_nll: np.ndarray
    checkpoint: object = field(repr=False, default=None)


def mnist_inpainting(images: Dataset, seed: int = 0, n_test: int = 1000, samples: int = 100,
                     mask_spec: str = "line:3", config: TrainConfig = MNIST_CONFIG) -> InpaintingResult:
    """Train on all but the last ``n_test`` images, then score inpainting of the rest under ``mask_spec``."""
    from .evalharness import naive_bayes_nll_rows
    from .masks import make_sampler

    n = len(images.values)
    train_ds, test = images.subset(slice(0, n - n_test)), images.subset(slice(n - n_test, n))
    ck = model.train(train_ds, mask_spec, config.replace(seed=seed))
    rng = np.random.default_rng(seed + 1)
    sampler = make_sampler(mask_spec, test.values.shape[1], images.meta.get("image_shape"), rng=rng)
    b = sampler(test.values, rng)
    is_nll = -model.log_lik_is(ck.model, test.values, b, samples, rng)
    mc_nll = -model.log_lik_mc(ck.model, test.values, b, samples, rng)
    nb = naive_bayes_nll_rows(train_ds.values, test.values, b)
    return InpaintingResult(is_nll, mc_nll, nb, ck)


# --- estimator sanity --------------------------------------------------------------------

def is_curve(checkpoint, x: np.ndarray, b: np.ndarray, sample_sizes=(1, 10, 100), repeats: int = 30,
             seed: int = 0) -> dict[int, np.ndarray]:
    """Mean IS-S log-likelihood over ``x`` for each S, repeated ``repeats`` times with fresh randomness."""
    rng = np.random.default_rng(seed)
    return {S: np.array([model.log_lik_is(checkpoint.model, x, b, S, rng).mean() for _ in range(repeats)])
            for S in sample_sizes}


# --- tabular imputation ---------------------------------------------------------------------

WINE_CONFIG = TrainConfig(epochs=50, latent_dim=16, hidden=(256,), dtype="float32")


def wine_imputation(repeats: int = 5, seed: int = 0, dataset: Dataset | None = None,
                    config: TrainConfig = WINE_CONFIG, **kwargs) -> list:
    """Run the imputation protocol on the white-wine surrogate (or ``dataset``) over ``repeats`` splits."""
    from .data import wine_surrogate
    from .evalharness import imputation_experiment

    ds = dataset if dataset is not None else wine_surrogate(rng=np.random.default_rng(seed))
    kwargs.setdefault("downstream", False)
    return [imputation_experiment(ds, config.replace(seed=seed + r), seed=seed + r, **kwargs) for r in range(repeats)]
