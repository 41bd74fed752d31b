"""IDX-format digit image ingestion and balanced labeled/unlabeled splits.

The IDX layout is big-endian: a 4-byte magic (0x803 for rank-3 image
files, 0x801 for rank-1 label files), one 4-byte count per dimension,
then the raw unsigned bytes.  Gzip-compressed files are accepted and
detected by their leading two bytes.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .errors import ConfigurationError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10


class IdxFormatError(ValueError):
    """Malformed IDX data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    """Flattened images in [0, 1] with integer class labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise ConfigurationError(f"images must be rank 2, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ConfigurationError(
                f"{self.images.shape[0]} images vs {self.labels.shape} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConfigurationError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(self.images[indices], self.labels[indices])


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _read_u32(raw: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(raw):
        raise IdxFormatError(f"truncated before {what}", len(raw))
    return struct.unpack_from(">I", raw, offset)[0]


def _parse_idx(raw: bytes, expected_magic: int, rank: int, what: str):
    magic = _read_u32(raw, 0, f"{what} magic")
    if magic != expected_magic:
        raise IdxFormatError(
            f"bad {what} magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0
        )
    dims = [_read_u32(raw, 4 + 4 * i, f"{what} dimension {i}") for i in range(rank)]
    start = 4 + 4 * rank
    count = int(np.prod(dims)) if dims else 0
    if start + count > len(raw):
        raise IdxFormatError(
            f"truncated {what} data: need {count} bytes, file ends early", len(raw)
        )
    if start + count < len(raw):
        raise IdxFormatError(f"{what} has trailing bytes past the declared data", start + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=start)
    return dims, data


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an images/labels IDX file pair, scaling pixels to [0, 1]."""
    image_dims, image_bytes = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, "image")
    label_dims, label_bytes = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, "label")
    n, rows, cols = image_dims
    if rows * cols == 0:
        raise IdxFormatError(f"degenerate image dimensions {rows}x{cols}", 8)
    if label_dims[0] != n:
        raise IdxFormatError(
            f"label count {label_dims[0]} does not match image count {n}", 4
        )
    images = image_bytes.reshape(n, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(images, label_bytes.astype(np.int64))


def write_idx_images(path, images_uint8) -> None:
    """Write a rank-3 IDX image file (gzipped when the path ends in .gz)."""
    arr = np.asarray(images_uint8, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError(f"expected n x rows x cols uint8 array, got shape {arr.shape}")
    blob = struct.pack(">IIII", IMAGE_MAGIC, *arr.shape) + arr.tobytes()
    _write_maybe_gzip(path, blob)


def write_idx_labels(path, labels) -> None:
    arr = np.asarray(labels, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError(f"expected rank-1 labels, got shape {arr.shape}")
    blob = struct.pack(">II", LABEL_MAGIC, arr.shape[0]) + arr.tobytes()
    _write_maybe_gzip(path, blob)


def _write_maybe_gzip(path, blob: bytes) -> None:
    if str(path).endswith(".gz"):
        # fixed mtime keeps the compressed bytes reproducible
        with open(path, "wb") as fh:
            fh.write(gzip.compress(blob, mtime=0))
    else:
        with open(path, "wb") as fh:
            fh.write(blob)


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a labeled subset out of a training set.

    ``index`` varies across repeated splits under the same seed, so a
    protocol that averages over several splits derives one spec per
    split index.
    """

    n_labeled: int
    seed: int = 0
    index: int = 0
    classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.classes < 1:
            raise ConfigurationError(f"classes must be >= 1, got {self.classes}")
        if self.n_labeled < self.classes or self.n_labeled % self.classes != 0:
            raise ConfigurationError(
                f"n_labeled must be a positive multiple of {self.classes}, got {self.n_labeled}"
            )


@dataclass
class MnistSplit:
    labeled: LabeledDataset
    unlabeled_images: np.ndarray  # labels withheld
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray


def make_split(data: LabeledDataset, spec: SplitSpec) -> MnistSplit:
    """Class-balanced labeled subset plus the unlabeled remainder.

    Exactly n_labeled/classes examples per class are drawn uniformly
    under (seed, index); the remainder's images are returned with their
    labels withheld.  The two index sets partition the dataset.
    """
    per_class = spec.n_labeled // spec.classes
    rng = RngStream(spec.seed).derive("split", spec.index)
    chosen = []
    for cls in range(spec.classes):
        pool = np.flatnonzero(data.labels == cls)
        if pool.size < per_class:
            raise ValueError(
                f"class {cls} has {pool.size} examples, split needs {per_class}"
            )
        picks = rng.derive("class", cls).choice(pool.size, size=per_class, replace=False)
        chosen.append(pool[picks])
    labeled_indices = np.sort(np.concatenate(chosen))
    mask = np.ones(len(data), dtype=bool)
    mask[labeled_indices] = False
    unlabeled_indices = np.flatnonzero(mask)
    return MnistSplit(
        labeled=data.subset(labeled_indices),
        unlabeled_images=data.images[unlabeled_indices],
        labeled_indices=labeled_indices,
        unlabeled_indices=unlabeled_indices,
    )
