#!/usr/bin/env python3
"""Build the mnist-small IDX pair from the 10,000 MNIST digits shipped in the
npm `mnist` package (https://www.npmjs.com/package/mnist, MIT license).

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_small.py package/src/digits data/
    tar czf data/mnist-small.tar.gz -C data mnist-small-images-idx3-ubyte mnist-small-labels-idx1-ubyte
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(digits_dir: Path, out_dir: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        data = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        pixels = np.asarray(data, dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(pixels * 255.0).clip(0, 255).astype(np.uint8))
        labels.append(np.full(pixels.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(0).permutation(images.shape[0])
    images, labels = images[order], labels[order]

    out_dir.mkdir(parents=True, exist_ok=True)
    n = images.shape[0]
    with open(out_dir / "mnist-small-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with open(out_dir / "mnist-small-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} examples to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
