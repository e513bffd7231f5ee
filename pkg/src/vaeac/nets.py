"""Fully-connected networks and the feature <-> network-column plumbing shared by the models."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BINARY, CATEGORICAL, REAL, FeatureSchema
from .distributions import LOG_2PI, positive_sigma


def init_mlp(sizes: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    """``[W1, b1, W2, b2, ...]`` with weights and biases uniform on ``+-1/sqrt(fan_in)``.

    This is the usual default for dense layers. He scaling (``sqrt(6/fan_in)``)
    was tried and starts deep stacks with very large outputs and losses.
    """
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return params


def mlp(params: list, x) -> Tensor:
    h = ad.as_tensor(x)
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


class Encoder:
    """Maps ``(n, D)`` feature values to network input columns.

    Reals and binaries take one column, categoricals a one-hot block. Hidden
    cells (``hide == 1``) and missing cells encode as all-zero.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.widths = [f.n_categories if f.kind == CATEGORICAL else 1 for f in schema.features]
        self.offsets = np.concatenate([[0], np.cumsum(self.widths)[:-1]]).astype(np.intp)
        self.width = int(sum(self.widths))
        self.scalar = np.array([i for i, f in enumerate(schema.features) if f.kind != CATEGORICAL], dtype=np.intp)
        self.categorical = schema.indices(CATEGORICAL)

    def encode(self, x: np.ndarray, hide: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        keep = (hide < 0.5) & ~np.isnan(x)
        vals = np.where(keep, x, 0.0)
        out = np.zeros((x.shape[0], self.width))
        if self.scalar.size:
            out[:, self.offsets[self.scalar]] = vals[:, self.scalar]
        for j in self.categorical:
            rows = np.nonzero(keep[:, j])[0]
            out[rows, self.offsets[j] + vals[rows, j].astype(np.intp)] = 1.0
        return out


class OutputLayout:
    """Column layout of per-feature distribution parameters at a network output.

    real: mean (+ raw sigma when learned); binary: one logit; categorical: K logits.
    """

    def __init__(self, schema: FeatureSchema, learned_sigma: bool):
        self.schema = schema
        self.learned_sigma = learned_sigma
        col = 0
        real_mean, real_sigma, binary = [], [], []
        self.cat_blocks: list[tuple[int, int, int]] = []  # (feature, start column, K)
        for j, f in enumerate(schema.features):
            if f.kind == REAL:
                real_mean.append(col)
                col += 1
                if learned_sigma:
                    real_sigma.append(col)
                    col += 1
            elif f.kind == BINARY:
                binary.append(col)
                col += 1
            else:
                self.cat_blocks.append((j, col, f.n_categories))
                col += f.n_categories
        self.width = col
        self.real_idx = schema.indices(REAL)
        self.binary_idx = schema.indices(BINARY)
        self.real_mean_cols = np.array(real_mean, dtype=np.intp)
        self.real_sigma_cols = np.array(real_sigma, dtype=np.intp)
        self.binary_cols = np.array(binary, dtype=np.intp)
        # categoricals grouped by category count so each group is one reshape
        groups: dict[int, list[tuple[int, int]]] = {}
        for j, start, k in self.cat_blocks:
            groups.setdefault(k, []).append((j, start))
        self.cat_groups = [
            (k, np.array([j for j, _ in members], dtype=np.intp),
             np.concatenate([np.arange(s, s + k) for _, s in members]).astype(np.intp))
            for k, members in sorted(groups.items())
        ]

    def real_sigma(self, out: Tensor) -> Tensor | None:
        if not self.learned_sigma:
            return None
        return positive_sigma(ad.take_columns(out, self.real_sigma_cols))

    def log_probs(self, out: Tensor, x: np.ndarray) -> list[tuple[np.ndarray, Tensor]]:
        """Per-feature log-densities as ``[(feature indices, (n, k) Tensor), ...]``.

        Missing cells of ``x`` are read as 0 / category 0; callers weight them out.
        """
        x = np.nan_to_num(np.asarray(x, dtype=float), nan=0.0)
        parts = []
        if self.real_idx.size:
            mean = ad.take_columns(out, self.real_mean_cols)
            diff = ad.add(x[:, self.real_idx], ad.neg(mean))
            sigma = self.real_sigma(out)
            if sigma is None:
                lp = -0.5 * ad.square(diff) - 0.5 * LOG_2PI
            else:
                lp = -0.5 * ad.square(diff / sigma) - ad.log(sigma) - 0.5 * LOG_2PI
            parts.append((self.real_idx, lp))
        if self.binary_idx.size:
            logits = ad.take_columns(out, self.binary_cols)
            xb = x[:, self.binary_idx]
            parts.append((self.binary_idx, xb * logits - ad.softplus(logits)))
        for k, feats, cols in self.cat_groups:
            n = out.shape[0]
            logits = ad.reshape(ad.take_columns(out, cols), (n, len(feats), k))
            onehot = np.eye(k)[x[:, feats].astype(np.intp)]
            lp = ad.sum_(ad.log_softmax(logits, axis=-1) * onehot, axis=-1)
            parts.append((feats, lp))
        return parts

    def weighted_sum(self, out: Tensor, x: np.ndarray, weights: np.ndarray) -> Tensor:
        """``sum_i weights[:, i] * log p(x_i)`` per row."""
        total = None
        for feats, lp in self.log_probs(out, x):
            term = ad.sum_(lp * weights[:, feats], axis=1)
            total = term if total is None else total + term
        if total is None:
            return ad.Tensor(np.zeros(out.shape[0]))
        return total

    def log_prob_matrix(self, out: Tensor, x: np.ndarray) -> np.ndarray:
        lp = np.zeros((out.shape[0], len(self.schema)))
        for feats, part in self.log_probs(out, x):
            lp[:, feats] = part.data
        return lp

    def sample(self, out: np.ndarray, rng: np.random.Generator, point: bool = False) -> np.ndarray:
        """Draw every feature from the output distribution (normalized units).

        With ``point`` reals return their mean and binaries their probability;
        categoricals are always sampled.
        """
        out = np.asarray(out)
        n = out.shape[0]
        x = np.zeros((n, len(self.schema)))
        if self.real_idx.size:
            mean = out[:, self.real_mean_cols]
            if point:
                x[:, self.real_idx] = mean
            else:
                sigma = self.real_sigma(ad.Tensor(out)).data if self.learned_sigma else 1.0
                x[:, self.real_idx] = mean + sigma * rng.standard_normal(mean.shape)
        if self.binary_idx.size:
            p = ad._sigmoid(out[:, self.binary_cols])
            x[:, self.binary_idx] = p if point else (rng.random(p.shape) < p).astype(float)
        for j, start, k in self.cat_blocks:
            logits = out[:, start:start + k]
            prob = np.exp(logits - logits.max(axis=1, keepdims=True))
            prob /= prob.sum(axis=1, keepdims=True)
            cdf = np.cumsum(prob, axis=1)
            u = rng.random((n, 1))
            x[:, j] = np.minimum((u > cdf).sum(axis=1), k - 1)
        return x
