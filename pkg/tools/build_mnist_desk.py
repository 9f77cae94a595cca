"""Build the bundled desk-scale MNIST subset as gzipped IDX files.

Source: the ``mnist`` npm package (10,000 real MNIST digits stored as JSON
arrays of pixel/255 values). Pixels are rescaled back to bytes, each class is
split deterministically (first 80% train, last 20% test, file order) and the
result is written in the standard IDX layout.

    npm pack mnist && tar xzf mnist-*.tgz
    python tools/build_mnist_desk.py package/src/digits src/scommer/datasets/mnist_desk
"""

import json
import sys
from pathlib import Path

import numpy as np

from scommer.streams import write_idx


def main(digits_dir, out_dir, train_fraction=0.8):
    digits_dir, out_dir = Path(digits_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = {"train": ([], []), "test": ([], [])}
    for digit in range(10):
        raw = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        images = np.rint(np.asarray(raw) * 255).clip(0, 255).astype(np.uint8).reshape(-1, 28, 28)
        n_train = int(round(train_fraction * len(images)))
        for name, chunk in (("train", images[:n_train]), ("test", images[n_train:])):
            parts[name][0].append(chunk)
            parts[name][1].append(np.full(len(chunk), digit, dtype=np.uint8))
    for name, (imgs, labels) in parts.items():
        write_idx(out_dir / f"{name}-images-idx3-ubyte.gz", np.concatenate(imgs))
        write_idx(out_dir / f"{name}-labels-idx1-ubyte.gz", np.concatenate(labels))
        print(name, sum(len(x) for x in labels))


if __name__ == "__main__":
    main(*sys.argv[1:3])
