#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package to IDX.

The npm package carries roughly 10k MNIST digits (about 1000 per class) as
float pixels in [0, 1]. This is a stand-in for machines that cannot reach the
official mirrors; the train/test split produced here is a seeded shuffle, not
the official split.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/npm_mnist_to_idx.py package/src/digits data/
"""
import argparse
import json
import random
import struct
from pathlib import Path


def write_idx(path, dims, payload):
    header = struct.pack(">BBBB", 0, 0, 0x08, len(dims))
    header += b"".join(struct.pack(">I", d) for d in dims)
    path.write_bytes(header + bytes(payload))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        data = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{label}.json: {len(data)} values is not a multiple of 784")
        for i in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[i:i + 784]]
            samples.append((pixels, label))

    random.Random(args.seed).shuffle(samples)
    n_test = int(len(samples) * args.test_fraction)
    splits = {"t10k": samples[:n_test], "train": samples[n_test:]}

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, rows in splits.items():
        images = bytearray()
        for pixels, _ in rows:
            images.extend(pixels)
        write_idx(args.out_dir / f"{prefix}-images-idx3-ubyte", [len(rows), 28, 28], images)
        write_idx(args.out_dir / f"{prefix}-labels-idx1-ubyte", [len(rows)], [l for _, l in rows])
        print(f"{prefix}: {len(rows)} images")


if __name__ == "__main__":
    main()
