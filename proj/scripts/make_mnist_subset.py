#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the 5 000-image sample that
ships inside the mlxtend wheel (500 images per digit, drawn from the MNIST
training set).

Per class the first 400 images go to the train split and the last 100 to the
test split; each split is then shuffled with a fixed seed so the files are
reproducible byte for byte.

    python3 scripts/make_mnist_subset.py --out data/mnist-subset
"""
import argparse
import glob
import gzip
import os
import random
import struct
import subprocess
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(workdir):
    subprocess.check_call(
        ["pip", "download", "mlxtend==0.24.0", "--no-deps", "-q", "-d", workdir])
    return glob.glob(os.path.join(workdir, "mlxtend-*.whl"))[0]


def write_idx(prefix, rows):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist-subset")
    ap.add_argument("--wheel", help="path to an already downloaded mlxtend wheel")
    ap.add_argument("--seed", type=int, default=20190101)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()

    by_class = {c: [] for c in range(10)}
    for line in raw.splitlines():
        fields = line.split(",")
        pixels = [int(float(v)) for v in fields[:-1]]
        assert len(pixels) == 784
        by_class[int(float(fields[-1]))].append((pixels, int(float(fields[-1]))))

    train, test = [], []
    for c in range(10):
        train += by_class[c][:400]
        test += by_class[c][400:]
    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)

    os.makedirs(args.out, exist_ok=True)
    write_idx(os.path.join(args.out, "train"), train)
    write_idx(os.path.join(args.out, "test"), test)
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
