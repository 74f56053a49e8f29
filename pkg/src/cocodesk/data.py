"""Datasets: seeded synthetic clusters, MNIST IDX files and feature dumps."""
from dataclasses import dataclass
import csv
import io
import struct

import numpy as np

from .errors import BadMagic, CountMismatch, TruncatedFile, ValidationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValidationError("inputs must be (N, D) with one label per row")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.num_classes):
            raise ValidationError(f"labels must lie in 1..{self.num_classes}")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def subset(self, idx, split=None):
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, split or self.split)


def class_directions(num_classes, dim, rng):
    d = rng.normal(size=(num_classes, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def synth_clusters(num_classes, input_dim, per_class, spread, seed):
    """Gaussian blobs around random unit directions, one direction per class.

    Samples are ordered class by class. ``spread`` is the per-coordinate
    noise standard deviation.
    """
    if num_classes < 2 or per_class < 1:
        raise ValidationError("need at least two classes and one sample per class")
    if spread < 0:
        raise ValidationError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    dirs = class_directions(num_classes, input_dim, rng)
    labels = np.repeat(np.arange(1, num_classes + 1), per_class)
    noise = rng.normal(size=(labels.size, input_dim))
    inputs = dirs[labels - 1] + spread * noise
    return Dataset(inputs, labels, num_classes)


def split_per_class(dataset, n_first, seed):
    """Split each class into its first ``n_first`` shuffled members and the rest."""
    rng = np.random.default_rng(seed)
    first, rest = [], []
    for k in range(1, dataset.num_classes + 1):
        idx = rng.permutation(np.flatnonzero(dataset.labels == k))
        first.extend(idx[:n_first])
        rest.extend(idx[n_first:])
    first, rest = np.sort(first), np.sort(rest)
    return dataset.subset(first, "train"), dataset.subset(rest, "test")


def _read_header(buf, path, expected_magic, ndims):
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise TruncatedFile(f"{path}: header needs {need} bytes, file has {len(buf)}")
    magic, *dims = struct.unpack(f">{1 + ndims}I", buf[:need])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    return dims, need


def read_idx_images(path):
    with open(path, "rb") as f:
        buf = f.read()
    (count, rows, cols), offset = _read_header(buf, path, IDX_IMAGES_MAGIC, 3)
    size = count * rows * cols
    if len(buf) - offset < size:
        raise TruncatedFile(f"{path}: expected {size} pixel bytes, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=offset).reshape(count, rows, cols)


def read_idx_labels(path):
    with open(path, "rb") as f:
        buf = f.read()
    (count,), offset = _read_header(buf, path, IDX_LABELS_MAGIC, 1)
    if len(buf) - offset < count:
        raise TruncatedFile(f"{path}: expected {count} label bytes, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=offset)


def load_idx(images_path, labels_path, split="train"):
    """MNIST-style IDX pair -> Dataset with pixels in [0, 1] and labels 1..10."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise ValidationError(f"{labels_path}: label {labels.max()} outside 0..9")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64) + 1, 10, split)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def fmt(x):
    return format(float(x), ".17g")


def comment_block(meta):
    """``# key: value`` header lines, one per metadata entry."""
    return "".join(f"# {k}: {v}\n" for k, v in meta.items())


def write_features_csv(path, features, labels, meta=None):
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    out = io.StringIO()
    if meta:
        out.write(comment_block(meta))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["label"] + [f"f{j}" for j in range(features.shape[1])])
    for lab, row in zip(labels, features):
        w.writerow([int(lab)] + [fmt(v) for v in row])
    with open(path, "w", newline="") as f:
        f.write(out.getvalue())


def read_features_csv(path):
    """Returns ``(features, labels)``; ``#`` comment lines are skipped."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(line for line in f if not line.startswith("#"))]
    if not rows or not rows[0] or rows[0][0] != "label":
        raise ValidationError(f"{path}: missing 'label,f0,...' header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValidationError(f"{path}: no feature rows")
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    feats = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    if feats.shape[1] != len(rows[0]) - 1:
        raise ValidationError(f"{path}: row width does not match header")
    return feats, labels
