"""Diagonal Gaussian, categorical and Bernoulli log-densities on :class:`Tensor`.

All functions reduce over the last axis, so a ``(n, d)`` batch yields ``(n,)``
and a single ``(d,)`` vector yields a scalar.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))
SIGMA_FLOOR = 1e-3
PROB_CLAMP = 1e-7


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = ad.as_tensor(self.mu)
        self.sigma = ad.as_tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise ad.ShapeError(f"GaussianParams: mu {self.mu.shape} vs sigma {self.sigma.shape}")

    def validate(self) -> "GaussianParams":
        if not np.all(self.sigma.data > 0):
            raise ValueError("GaussianParams: sigma must be strictly positive")
        return self

    @classmethod
    def from_raw(cls, raw: Tensor, floor: float = SIGMA_FLOOR) -> "GaussianParams":
        """Split a ``(n, 2d)`` network output into mean and softplus-floored sigma."""
        d = raw.shape[-1] // 2
        return cls(raw[..., :d], positive_sigma(raw[..., d:], floor))


def positive_sigma(raw, floor: float = SIGMA_FLOOR) -> Tensor:
    return ad.maximum(ad.softplus(raw), floor)


def gaussian_log_prob(x, p: GaussianParams) -> Tensor:
    p.validate()
    x = ad.as_tensor(x)
    z = (x - p.mu) / p.sigma
    per_dim = -0.5 * ad.square(z) - ad.log(p.sigma) - 0.5 * LOG_2PI
    return ad.sum_(per_dim, axis=-1)


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) between diagonal Gaussians, in closed form."""
    q.validate()
    p.validate()
    var_ratio = ad.square(q.sigma / p.sigma)
    mean_term = ad.square((q.mu - p.mu) / p.sigma)
    per_dim = ad.log(p.sigma) - ad.log(q.sigma) + 0.5 * (var_ratio + mean_term) - 0.5
    return ad.sum_(per_dim, axis=-1)


def reparam_sample(p: GaussianParams, epsilon) -> Tensor:
    epsilon = ad.as_tensor(epsilon)
    if epsilon.shape != p.mu.shape:
        raise ad.ShapeError(f"reparam_sample: epsilon {epsilon.shape} vs mu {p.mu.shape}")
    return p.mu + epsilon * p.sigma


def categorical_log_prob(logits, k) -> Tensor:
    """log Softmax(logits)[k]; ``k`` is an integer (array) indexing the last axis."""
    logits = ad.as_tensor(logits)
    n_cat = logits.shape[-1]
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= n_cat):
        raise IndexError(f"categorical_log_prob: category index out of range [0, {n_cat})")
    onehot = np.eye(n_cat)[k.astype(np.intp)]
    return ad.sum_(ad.log_softmax(logits, axis=-1) * onehot, axis=-1)


def bernoulli_log_prob(p, x) -> Tensor:
    """Bernoulli log-likelihood from a probability, clamped to [1e-7, 1 - 1e-7]."""
    p = ad.clip(ad.as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)
    x = np.asarray(x, dtype=float)
    return x * ad.log(p) + (1.0 - x) * ad.log(1.0 - p)


def bernoulli_log_prob_logits(logits, x) -> Tensor:
    """Bernoulli log-likelihood parameterized by a logit (x*l - softplus(l))."""
    logits = ad.as_tensor(logits)
    x = np.asarray(x, dtype=float)
    return x * logits - ad.softplus(logits)


def standard_normal_log_prob(x) -> Tensor:
    x = ad.as_tensor(x)
    return ad.sum_(-0.5 * ad.square(x) - 0.5 * LOG_2PI, axis=-1)
