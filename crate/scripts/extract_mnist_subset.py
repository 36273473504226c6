"""Write the 5000-image MNIST subset shipped inside the mlxtend wheel as gzipped IDX files.

Usage: python3 scripts/extract_mnist_subset.py [out_dir]

The subset holds 500 images per class drawn from the MNIST training set.
Requires `pip download --no-deps mlxtend` to reach a package index.
"""
import glob
import gzip
import io
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def main() -> None:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data"
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend==0.24.0"],
            check=True,
        )
        wheel = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]
        raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",").astype(np.uint8)
    pixels, labels = table[:, :-1], table[:, -1]
    n = len(labels)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + pixels.tobytes()
    label_bytes = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    for name, payload in [("mnist-5k-images-idx3-ubyte.gz", images), ("mnist-5k-labels-idx1-ubyte.gz", label_bytes)]:
        with gzip.GzipFile(os.path.join(out_dir, name), "wb", mtime=0) as fh:
            fh.write(payload)
    print(f"wrote {n} images to {out_dir}")


if __name__ == "__main__":
    main()
