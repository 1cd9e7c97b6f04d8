#!/usr/bin/env python3
"""Populate a dataset directory usable by `advdrop` from locally installable packages.

Produces, under $ADVDROP_DATA_DIR (default: ./data):

  mnist-10k/{train,t10k}-{images-idx3,labels-idx1}-ubyte
      ~10k MNIST digits shipped in the npm `mnist` package, re-encoded as
      IDX files (8000 train / 2000 test, stratified, fixed seed).
  uci/boston.csv
      Boston housing table (MASS::Boston, shipped in the pip `pydataset`
      package), 13 features followed by the `medv` target.

The full MNIST files, when available, can be dropped into `mnist/` under the
same directory with their official names. Other UCI tables (concrete,
wine-red, yacht) go into `uci/<name>.csv` as comma-separated files with a
header row and the target as the last column.
"""

import argparse
import csv
import io
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile


def fetch(cmd, cwd):
    subprocess.run(cmd, cwd=cwd, check=True, stdout=subprocess.DEVNULL)


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def mnist_subset(out_dir, work, npm_tgz=None, train_fraction=0.8, seed=20240601):
    if npm_tgz is None:
        fetch(["npm", "pack", "mnist@1.1.0"], work)
        npm_tgz = os.path.join(work, "mnist-1.1.0.tgz")
    per_class = {}
    with tarfile.open(npm_tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            data = json.load(member)["data"]
            n = len(data) // 784
            imgs = []
            for i in range(n):
                px = data[i * 784:(i + 1) * 784]
                imgs.append([min(255, max(0, round(v * 255))) for v in px])
            per_class[digit] = imgs

    rng = random.Random(seed)
    train, test = [], []
    for digit, imgs in per_class.items():
        idx = list(range(len(imgs)))
        rng.shuffle(idx)
        cut = round(len(idx) * train_fraction)
        train += [(imgs[i], digit) for i in idx[:cut]]
        test += [(imgs[i], digit) for i in idx[cut:]]
    rng.shuffle(train)
    rng.shuffle(test)

    os.makedirs(out_dir, exist_ok=True)
    for split, rows in (("train", train), ("t10k", test)):
        write_idx_images(os.path.join(out_dir, f"{split}-images-idx3-ubyte"), [r[0] for r in rows])
        write_idx_labels(os.path.join(out_dir, f"{split}-labels-idx1-ubyte"), [r[1] for r in rows])
    print(f"mnist-10k: {len(train)} train / {len(test)} test -> {out_dir}")


def boston(out_path, work, sdist=None):
    if sdist is None:
        fetch([sys.executable, "-m", "pip", "download", "--no-deps", "--no-binary", ":all:",
               "pydataset==0.2.0", "-d", work], work)
        sdist = os.path.join(work, "pydataset-0.2.0.tar.gz")
    with tarfile.open(sdist) as outer:
        res = outer.extractfile("pydataset-0.2.0/pydataset/resources.tar.gz").read()
    with tarfile.open(fileobj=io.BytesIO(res)) as inner:
        raw = inner.extractfile("resources/rdata/csv/MASS/Boston.csv").read().decode()
    rows = list(csv.reader(io.StringIO(raw)))
    header = rows[0][1:]
    body = [r[1:] for r in rows[1:]]
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    print(f"boston: {len(body)} rows x {len(header) - 1} features -> {out_path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.environ.get("ADVDROP_DATA_DIR", "data"))
    ap.add_argument("--mnist-npm-tgz", help="pre-downloaded mnist-1.1.0.tgz")
    ap.add_argument("--pydataset-sdist", help="pre-downloaded pydataset-0.2.0.tar.gz")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as work:
        mnist_subset(os.path.join(args.out, "mnist-10k"), work, args.mnist_npm_tgz)
        boston(os.path.join(args.out, "uci", "boston.csv"), work, args.pydataset_sdist)


if __name__ == "__main__":
    main()
