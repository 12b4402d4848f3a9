#!/usr/bin/env python3
"""Writes the scikit-learn 8x8 digits set as MNIST-style IDX files.

Pixels 0..16 are scaled to 0..255. A seeded shuffle splits the 1797 images
into train and t10k files.
"""
import argparse
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits


def write_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/digits")
    parser.add_argument("--test", type=int, default=297)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).clip(0, 255)
    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], digits.target[order]
    split = len(images) - args.test

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[:split])
    write_labels(out / "train-labels-idx1-ubyte", labels[:split])
    write_images(out / "t10k-images-idx3-ubyte", images[split:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[split:])
    print(f"{split} train / {args.test} test images written to {out}")


if __name__ == "__main__":
    main()
