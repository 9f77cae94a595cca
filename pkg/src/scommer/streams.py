"""Datasets (IDX files, bundled desk MNIST, synthetic blobs) and task streams."""

import gzip
import json
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {dt.newbyteorder("="): code for code, dt in IDX_TYPES.items()}


def _open(path, mode):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path):
    """Parse an IDX file (optionally gzipped) into an array with its declared dims."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: file too short for an IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in IDX_TYPES:
        raise DatasetError(f"{path}: bad IDX magic 0x{raw[:4].hex()}")
    header = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    body = len(raw) - header
    if body != expected:
        raise DatasetError(
            f"{path}: header declares dims {dims} ({expected} bytes of data) but file holds {body} bytes"
        )
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    array = np.asarray(array)
    code = IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise DatasetError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header + array.astype(IDX_TYPES[code]).tobytes())


def load_idx_dataset(images_path, labels_path):
    """Images scaled to [0, 1] with a channel axis ``(n, 1, H, W)``; integer labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise DatasetError(f"{images_path}: expected 3 image dims (n, rows, cols), got {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DatasetError(
            f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images in {images_path}"
        )
    scale = 255.0 if images.dtype == np.uint8 else 1.0
    return images[:, None, :, :].astype(np.float64) / scale, labels.astype(np.int64)


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int
    name: str = "dataset"

    @property
    def input_shape(self):
        return self.train_x.shape[1:]

    def limit(self, train_per_class=None, test_per_class=None):
        """Keep the first ``n`` samples of each class (file order)."""
        def take(y, n):
            if n is None:
                return np.arange(len(y))
            return np.sort(np.concatenate([np.flatnonzero(y == c)[:n] for c in range(self.n_classes)]))

        tr, te = take(self.train_y, train_per_class), take(self.test_y, test_per_class)
        return Dataset(self.train_x[tr], self.train_y[tr], self.test_x[te], self.test_y[te],
                       self.n_classes, self.name)


def load_idx_pair(train_images, train_labels, test_images, test_labels, name="idx"):
    tx, ty = load_idx_dataset(train_images, train_labels)
    vx, vy = load_idx_dataset(test_images, test_labels)
    return Dataset(tx, ty, vx, vy, int(max(ty.max(), vy.max())) + 1, name)


def mnist_desk():
    """The bundled 10k-digit MNIST subset (about 8k train / 2k test)."""
    root = resources.files("scommer") / "datasets" / "mnist_desk"
    with resources.as_file(root) as base:
        return load_idx_pair(
            base / "train-images-idx3-ubyte.gz", base / "train-labels-idx1-ubyte.gz",
            base / "test-images-idx3-ubyte.gz", base / "test-labels-idx1-ubyte.gz",
            name="mnist_desk",
        )


def make_blobs(n_classes=10, train_per_class=50, test_per_class=20, size=8, noise=0.25, seed=0):
    """Gaussian noise around one random prototype image per class, clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    protos = rng.random((n_classes, 1, size, size))

    def draw(per_class):
        y = np.repeat(np.arange(n_classes), per_class)
        x = protos[y] + noise * rng.standard_normal((len(y), 1, size, size))
        return np.clip(x, 0.0, 1.0), y

    tx, ty = draw(train_per_class)
    vx, vy = draw(test_per_class)
    return Dataset(tx, ty, vx, vy, n_classes, "blobs")


@dataclass
class TaskSpec:
    task_id: int
    classes: list
    counts: dict  # class -> number of training samples
    train_indices: np.ndarray = field(repr=False)
    test_indices: np.ndarray = field(repr=False)

    def to_dict(self):
        d = asdict(self)
        d["counts"] = {str(k): int(v) for k, v in self.counts.items()}
        d["train_indices"] = self.train_indices.tolist()
        d["test_indices"] = self.test_indices.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["task_id"], list(d["classes"]), {int(k): v for k, v in d["counts"].items()},
                   np.asarray(d["train_indices"], dtype=np.int64), np.asarray(d["test_indices"], dtype=np.int64))


def split_stream(dataset, n_tasks):
    """Class-IL split: task ``t`` owns classes ``[t*C/T, (t+1)*C/T)`` in ascending order."""
    c = dataset.n_classes
    if n_tasks < 1 or c % n_tasks:
        raise ConfigError(f"{c} classes cannot be split evenly into {n_tasks} tasks")
    per = c // n_tasks
    specs = []
    for t in range(n_tasks):
        classes = list(range(t * per, (t + 1) * per))
        tr = np.flatnonzero(np.isin(dataset.train_y, classes))
        te = np.flatnonzero(np.isin(dataset.test_y, classes))
        counts = {k: int((dataset.train_y == k).sum()) for k in classes}
        specs.append(TaskSpec(t, classes, counts, tr, te))
    return specs


def zipf_weights(n_classes, s=1.0):
    w = 1.0 / np.arange(1, n_classes + 1) ** s
    return w / w.sum()


def allocate(total, weights, caps):
    """Split ``total`` integer units proportionally to ``weights`` without exceeding
    ``caps``. Fractions go to the largest remainders (lower position wins ties);
    overflow from capped entries is redistributed over the rest."""
    weights = np.asarray(weights, dtype=np.float64)
    caps = np.asarray(caps, dtype=np.int64)
    if caps.sum() < total:
        raise DatasetError(f"cannot place {total} samples in classes holding only {caps.sum()}")
    alloc = np.zeros(len(weights), dtype=np.int64)
    remaining = int(total)
    while remaining > 0:
        open_ = alloc < caps
        w = np.where(open_, weights, 0.0)
        if w.sum() <= 0:
            w = open_.astype(np.float64)
        share = remaining * w / w.sum()
        base = np.floor(share).astype(np.int64)
        extra = remaining - int(base.sum())
        frac = np.where(open_, share - base, -1.0)
        base[np.argsort(-frac, kind="stable")[:extra]] += 1
        add = np.minimum(base, caps - alloc)
        alloc += add
        remaining -= int(add.sum())
    return alloc


def gcil_stream(dataset, n_tasks=20, samples_per_task=1000, max_classes=50, weighting="unif", seed=1993):
    """Generalised Class-IL stream with recurring classes and variable task shapes.

    Per task: the class count is uniform on ``[2, max_classes]``; classes are
    drawn without replacement (uniformly, or by Zipf(s=1) weight over class id
    for ``longtail``); the sample budget is split equally (``unif``) or by the
    same Zipf weights (``longtail``), capped by each class's training pool.
    """
    c = dataset.n_classes
    if weighting not in ("unif", "longtail"):
        raise ConfigError(f"weighting must be 'unif' or 'longtail', got {weighting!r}")
    if not 2 <= max_classes <= c:
        raise ConfigError(f"max_classes must lie in [2, {c}], got {max_classes}")
    if samples_per_task > len(dataset.train_y):
        raise ConfigError(f"samples_per_task {samples_per_task} exceeds the {len(dataset.train_y)} training samples")
    rng = np.random.default_rng(seed)
    pools = [np.flatnonzero(dataset.train_y == k) for k in range(c)]
    zipf = zipf_weights(c)
    specs = []
    for t in range(n_tasks):
        k_t = int(rng.integers(2, max_classes + 1))
        if weighting == "unif":
            classes = np.sort(rng.choice(c, size=k_t, replace=False))
            weights = np.ones(k_t)
        else:
            classes = np.sort(rng.choice(c, size=k_t, replace=False, p=zipf))
            weights = zipf[classes]
        counts = allocate(samples_per_task, weights, [len(pools[k]) for k in classes])
        tr = np.sort(np.concatenate([rng.choice(pools[k], size=n, replace=False) for k, n in zip(classes, counts)]))
        te = np.flatnonzero(np.isin(dataset.test_y, classes))
        specs.append(TaskSpec(t, [int(k) for k in classes], {int(k): int(n) for k, n in zip(classes, counts)}, tr, te))
    return specs


def save_streams(path, specs):
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in specs], fh)


def load_streams(path):
    with open(path) as fh:
        return [TaskSpec.from_dict(d) for d in json.load(fh)]
