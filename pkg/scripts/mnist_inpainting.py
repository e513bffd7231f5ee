"""Desk-scale binarized MNIST inpainting: VAEAC IS/MC likelihoods vs Naive Bayes.

Needs ``data/mnist10k-images.idx`` (see ``fetch_mnist.py``).
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from vaeac import checkpoint, data
from vaeac import experiments as ex

DEFAULT_DATA = Path(__file__).resolve().parent.parent / "data" / "mnist10k-images.idx"


def mean_sem(v):
    return v.mean(), v.std(ddof=1) / np.sqrt(len(v))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", type=Path, default=DEFAULT_DATA)
    parser.add_argument("--mask", default="line:3")
    parser.add_argument("--epochs", type=int, default=ex.MNIST_CONFIG.epochs)
    parser.add_argument("--samples", type=int, default=100)
    parser.add_argument("--n-test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--save", type=Path, help="write the trained checkpoint here")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    images = data.load_idx_images(args.data)
    r = ex.mnist_inpainting(images, seed=args.seed, n_test=args.n_test, samples=args.samples, mask_spec=args.mask,
                            config=ex.MNIST_CONFIG.replace(epochs=args.epochs))
    S = args.samples
    for name, v in ((f"VAEAC IS-{S}", r.is_nll), (f"VAEAC MC-{S}", r.mc_nll), ("Naive Bayes", r.naive_bayes_nll)):
        m, s = mean_sem(v)
        print(f"{name:>14} NLL {m:8.2f} +- {s:.2f}")
    if args.save:
        checkpoint.save(r.checkpoint, args.save)


if __name__ == "__main__":
    main()
