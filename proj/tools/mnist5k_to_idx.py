#!/usr/bin/env python3
"""Write the 5000-image MNIST subset bundled with mlxtend as a gzipped IDX file.

Usage: mnist5k_to_idx.py OUT.gz [--wheel path/to/mlxtend.whl]

Without --wheel the script fetches the mlxtend wheel with pip. Only the image
part is written (labels are not needed by the trainer).
"""
import argparse
import glob
import gzip
import io
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                           "-d", dest, "mlxtend"])
    return glob.glob(dest + "/mlxtend-*.whl")[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()

    rows = [line.split(",") for line in raw.splitlines() if line]
    buf = io.BytesIO()
    buf.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    for r in rows:
        buf.write(bytes(int(float(v)) for v in r[:784]))
    # mtime=0 keeps the output byte-identical across runs
    with open(args.out, "wb") as f:
        f.write(gzip.compress(buf.getvalue(), mtime=0))
    print(f"wrote {len(rows)} images to {args.out}")


if __name__ == "__main__":
    main()
