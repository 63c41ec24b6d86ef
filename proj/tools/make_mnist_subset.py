#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into IDX files.

The package stores each digit class as a flat JSON array of 784-pixel images with
intensities rounded to three decimals; multiplying by 255 and rounding recovers
the original bytes exactly. A fixed permutation (seed 0) splits the digits into a
9,000-image training file pair and a 1,000-image test file pair, both gzipped.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import argparse
import gzip
import json
import random
import struct
from pathlib import Path

TRAIN_COUNT = 9000


def write_idx(out_dir: Path, prefix: str, images, labels):
    with gzip.GzipFile(out_dir / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(out_dir / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    samples = []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for i in range(len(raw) // 784):
            pixels = [round(v * 255) for v in raw[i * 784:(i + 1) * 784]]
            assert all(0 <= p <= 255 for p in pixels)
            samples.append((pixels, digit))

    random.Random(0).shuffle(samples)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    train, test = samples[:TRAIN_COUNT], samples[TRAIN_COUNT:]
    write_idx(args.out_dir, "train", [s[0] for s in train], [s[1] for s in train])
    write_idx(args.out_dir, "test", [s[0] for s in test], [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()
