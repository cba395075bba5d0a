#!/usr/bin/env python3
"""Rebuild data/mnist from the IDX files shipped in the `mnist-data` npm package.

Writes every training-set '4' (train-fours-*) plus the full t10k test set, gzipped.
Usage: tools/fetch_mnist.py [out_dir]   (needs `npm` on PATH)
"""
import gzip
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile

out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
out.mkdir(parents=True, exist_ok=True)
with tempfile.TemporaryDirectory() as tmp:
    subprocess.run(["npm", "pack", "mnist-data@1.2.6"], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
    with tarfile.open(pathlib.Path(tmp) / "mnist-data-1.2.6.tgz") as tar:
        files = {m.name.split("/")[-1]: tar.extractfile(m).read() for m in tar.getmembers() if "/data/" in m.name}

images, labels = files["train-images-idx3-ubyte"], files["train-labels-idx1-ubyte"]
n, rows, cols = struct.unpack(">III", images[4:16])
keep = [i for i in range(n) if labels[8 + i] == 4]
body = b"".join(images[16 + i * rows * cols:16 + (i + 1) * rows * cols] for i in keep)
with gzip.GzipFile(out / "train-fours-images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 2051, len(keep), rows, cols) + body)
for name in ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
    with gzip.GzipFile(out / (name + ".gz"), "wb", mtime=0) as f:
        f.write(files[name])
print(f"{len(keep)} training fours, t10k written to {out}")
