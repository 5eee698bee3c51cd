"""Build the checked-in MNIST subset (IDX, gzip) from the `mnist` npm package.

Usage: python3 scripts/mnist_subset.py <path-to-npm-package> <out-dir> [per_class]

The npm package ships 28x28 MNIST digits as JSON arrays of floats in [0,1]
rounded to three decimals. Examples are interleaved by class (0,1,...,9,0,1,...)
so any prefix is class-balanced.
"""
import gzip
import json
import os
import struct
import sys


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    per_class = int(sys.argv[3]) if len(sys.argv) > 3 else 600
    digits = []
    for d in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{d}.json")) as f:
            digits.append(json.load(f)["data"])
    images = bytearray()
    labels = bytearray()
    for i in range(per_class):
        for d in range(10):
            px = digits[d][i * 784:(i + 1) * 784]
            images.extend(min(255, max(0, int(round(v * 255)))) for v in px)
            labels.append(d)
    n = per_class * 10
    os.makedirs(out, exist_ok=True)
    with gzip.GzipFile(os.path.join(out, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">BBBBIII", 0, 0, 8, 3, n, 28, 28) + bytes(images))
    with gzip.GzipFile(os.path.join(out, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">BBBBI", 0, 0, 8, 1, n) + bytes(labels))


if __name__ == "__main__":
    main()
