#!/usr/bin/env python3
"""Convert the digit files shipped in the npm `mnist` package into IDX files.

The package (https://www.npmjs.com/package/mnist, MIT) bundles 10,000 MNIST
digits as JSON arrays of pixel intensities rounded to three decimals. Every
byte value survives the round trip exactly since 0.0005 * 255 < 0.5.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for start in range(0, len(flat), 784):
            pixels = bytes(round(v * 255) for v in flat[start:start + 784])
            samples.append((pixels, digit))
    random.Random(20240101).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    images = struct.pack(">IIII", 2051, n, 28, 28) + b"".join(p for p, _ in samples)
    labels = struct.pack(">II", 2049, n) + bytes(d for _, d in samples)
    # mtime=0 keeps the archives byte-reproducible
    with open(dst / "subset-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(gzip.compress(images, mtime=0))
    with open(dst / "subset-labels-idx1-ubyte.gz", "wb") as fh:
        fh.write(gzip.compress(labels, mtime=0))
    print(f"wrote {n} images to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
