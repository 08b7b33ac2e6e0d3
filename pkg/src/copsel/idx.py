"""Bit-exact IDX (MNIST) file ingestion.

Big-endian magic 0x00000803 for image files and 0x00000801 for label
files, followed by 32-bit dimension sizes and unsigned bytes. Pixels are
scaled to [0, 1]; images are flattened to one row per sample.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from .synthetic import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _open(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise IdxFormatError(f"truncated file while reading {what}")
    return buf


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, "magic"))
        if magic != expected_magic:
            raise IdxFormatError(
                f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        ndim = magic & 0xFF
        dims = [struct.unpack(">I", _read_exact(fh, 4, "dimension"))[0]
                for _ in range(ndim)]
        total = int(np.prod(dims))
        data = np.frombuffer(_read_exact(fh, total, "payload"), dtype=np.uint8)
    return data.reshape(dims)


def parse_idx(images_path, labels_path) -> Dataset:
    """Load an images/labels IDX pair into a flat float dataset."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs "
            f"{labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(x=x, y=y, n_classes=int(y.max()) + 1)
