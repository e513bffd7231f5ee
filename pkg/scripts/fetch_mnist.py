"""Fetch a 10,000-digit MNIST subset and write it as IDX files.

The digits come from the ``mnist`` npm package (MIT licensed), which ships
1,000-ish grey-scale 28x28 digits per class as JSON. ``npm pack`` downloads
the tarball without installing anything. The result is::

    <out>/mnist10k-images.idx   (10000 x 28 x 28, uint8)
    <out>/mnist10k-labels.idx

Rows are shuffled with a fixed seed so any prefix is class-balanced.
"""
from __future__ import annotations

import argparse
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from vaeac.data import write_idx_images, write_idx_labels

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "data"


def fetch(out: Path, seed: int = 0) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
        with tarfile.open(next(Path(tmp).glob("mnist-*.tgz"))) as tar:
            tar.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            raw = json.loads((Path(tmp) / "package" / "src" / "digits" / f"{digit}.json").read_text())
            pixels = np.asarray(raw["data"], dtype=float).reshape(-1, 28, 28)
            images.append(np.rint(pixels * 255).astype(np.uint8))
            labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    images, labels = np.concatenate(images), np.concatenate(labels)
    order = np.random.default_rng(seed).permutation(len(images))
    path = out / "mnist10k-images.idx"
    write_idx_images(images[order], path)
    write_idx_labels(labels[order], out / "mnist10k-labels.idx")
    return path


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    path = fetch(args.out)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
