"""Dataset container and IDX / CSV ingestion."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidArgumentError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W), float64
    labels: np.ndarray  # (N,), int
    split: str = "train"
    normalization: dict = field(default_factory=lambda: {"scale": 1 / 255, "offset": 0.0})

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.ndim == 3:
            self.images = self.images[:, None]
        if self.images.ndim != 4:
            raise InvalidArgumentError("images must have shape (N, C, H, W) or (N, H, W)")
        if len(self.images) != len(self.labels):
            raise InvalidArgumentError("image and label counts differ")
        if self.split not in ("train", "test", "validation"):
            raise InvalidArgumentError(f"unknown split {self.split!r}")
        if len(self.labels) and self.labels.min() < 0:
            raise InvalidArgumentError("labels must be non-negative class indices")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx, split=None):
        return Dataset(self.images[idx], self.labels[idx], split or self.split, dict(self.normalization))


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw, magic, what):
    if len(raw) < 4:
        raise DataFormatError(f"{what}: file too short for an IDX magic number", 0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataFormatError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise DataFormatError(f"{what}: truncated header", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:end])
    need = int(np.prod(dims))
    if len(raw) < end + need:
        raise DataFormatError(
            f"{what}: truncated data, expected {need} bytes after the header", len(raw)
        )
    return dims, np.frombuffer(raw, dtype=np.uint8, count=need, offset=end)


def ingest_idx(image_path, label_path, split="train"):
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to ``[0, 1]``."""
    dims, pixels = _idx_header(_read(image_path), IDX_IMAGES_MAGIC, "images")
    (count,), labels = _idx_header(_read(label_path), IDX_LABELS_MAGIC, "labels")
    if dims[0] != count:
        raise DataFormatError(f"count mismatch: {dims[0]} images but {count} labels", 4)
    images = pixels.reshape(dims).astype(float) / 255.0
    return Dataset(images, labels.astype(int), split)


def write_idx(image_path, label_path, images, labels):
    """Write ``uint8`` images ``(N, H, W)`` and labels in IDX format."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise InvalidArgumentError("IDX writer takes uint8 arrays")
    N, H, W = images.shape
    Path(image_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, N, H, W) + images.tobytes())
    Path(label_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def ingest_csv(path, height=None, width=None, split="train"):
    """Read ``label,p0,p1,...`` rows with pixel values in ``[0, 255]``.

    Without ``height``/``width`` the image is assumed square.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError("empty dataset file", 1)
    header = rows[0]
    if not header or header[0].strip() != "label":
        raise DataFormatError("header must start with 'label'", 1)
    npix = len(header) - 1
    if height is None or width is None:
        side = int(round(np.sqrt(npix)))
        if side * side != npix:
            raise DataFormatError(f"{npix} pixel columns do not form a square image", 1)
        height = width = side
    if height * width != npix:
        raise DataFormatError(f"{npix} pixel columns do not match {height}x{width}", 1)
    labels, images = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != npix + 1:
            raise DataFormatError(f"row has {len(row)} cells, expected {npix + 1}", lineno)
        try:
            label = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise DataFormatError("non-numeric cell", lineno) from None
        labels.append(label)
        images.append(vals)
    if not labels:
        raise DataFormatError("dataset has no examples", len(rows))
    images = np.asarray(images).reshape(-1, height, width) / 255.0
    return Dataset(images, np.asarray(labels), split)


def load_digits_dataset(n_train=None, seed=0, ratio=2 / 3):
    """The 8x8 handwritten digits shipped with scikit-learn, split into train/test.

    Intensities (0..16) are mapped to ``[0, 1]``.  The split is a seeded
    permutation with ``ratio`` of the examples (or ``n_train`` of them) in
    the training set.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    X = d.images / 16.0
    y = d.target.astype(int)
    perm = np.random.default_rng(seed).permutation(len(y))
    k = int(round(ratio * len(y))) if n_train is None else n_train
    norm = {"scale": 1 / 16, "offset": 0.0}
    train = Dataset(X[perm[:k]], y[perm[:k]], "train", norm)
    test = Dataset(X[perm[k:]], y[perm[k:]], "test", dict(norm))
    return train, test


def digits_as_uint8(dataset):
    """Quantise ``[0, 1]`` images to bytes for IDX/CSV export."""
    return np.round(dataset.images[:, 0] * 255).astype(np.uint8)
