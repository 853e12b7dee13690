"""Datasets: IDX ingestion, a synthetic desk-scale task, splits.

IDX is the big-endian ubyte container used for MNIST-format files:
images carry magic 0x00000803 and dims (N, H, W); labels carry magic
0x00000801 and dim (N). Only grayscale IDX ingestion is built in; color
data arrives through a raw image directory whose sorted class subfolders
name the labels (see load_image_dir).

The synthetic task draws class-conditional quadrant patterns: class c
assigns each quadrant q the high or low base intensity according to bit
q of c, then adds bounded uniform pixel noise. A linear probe on raw
pixels separates the classes, so failures to learn are the model's fault,
not the data's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """images: (N, C, H, W) integers in [0, 255]; labels: (N,) integers."""
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ValueError("labels must be (N,) matching images")
        if not np.issubdtype(self.images.dtype, np.integer):
            raise TypeError("images must be integer-valued")
        if self.images.size and (int(self.images.min()) < 0
                                 or int(self.images.max()) > 255):
            raise ValueError("image values must lie in [0, 255]")

    def __len__(self):
        return self.images.shape[0]

    @property
    def channels(self):
        return self.images.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0


def load_idx(images_path, labels_path=None) -> Dataset:
    """Read an IDX image file (and optionally its label file)."""
    raw = Path(images_path).read_bytes()
    if len(raw) < 16:
        raise ValueError("IDX image file too short for its header")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise ValueError(f"bad IDX image magic 0x{magic:08x}")
    if len(raw) - 16 < n * h * w:
        raise ValueError("IDX image file truncated")
    images = np.frombuffer(raw, dtype=np.uint8, count=n * h * w,
                           offset=16).reshape(n, 1, h, w)
    if labels_path is None:
        labels = np.zeros(n, dtype=np.int64)
    else:
        lraw = Path(labels_path).read_bytes()
        if len(lraw) < 8:
            raise ValueError("IDX label file too short for its header")
        lmagic, ln = struct.unpack(">II", lraw[:8])
        if lmagic != LABEL_MAGIC:
            raise ValueError(f"bad IDX label magic 0x{lmagic:08x}")
        if ln != n:
            raise ValueError(f"label count {ln} != image count {n}")
        if len(lraw) - 8 < ln:
            raise ValueError("IDX label file truncated")
        labels = np.frombuffer(lraw, dtype=np.uint8, count=ln,
                               offset=8).astype(np.int64)
    return Dataset(images.astype(np.int64), labels)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an IDX image/label file pair."""
    if ds.channels != 1:
        raise ValueError("write_idx supports single-channel datasets only")
    n, _, h, w = ds.images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, h, w))
        f.write(ds.images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def synthetic(n: int, classes: int = 10, height: int = 10, width: int = 10,
              noise: float = 96.0, low: int = 104, high: int = 136,
              seed: int = 0) -> Dataset:
    """Class-conditional quadrant patterns with uniform pixel noise.

    Quadrant q of class c is `high` when bit q of c is set, else `low`;
    noise is uniform on [-noise, +noise], rounded and clipped to [0, 255].
    Labels cycle 0..classes-1 so the set is balanced. Deterministic in
    (n, classes, dims, noise, levels, seed). The defaults put a small
    convolutional net in the discriminative regime (well above chance,
    below saturation), which is what the coding-mode comparisons need.
    """
    if n < classes:
        raise ValueError("need at least one sample per class")
    if not 2 <= classes <= 16:
        raise ValueError("classes must lie in [2, 16] (4 quadrant bits)")
    if height < 2 or width < 2:
        raise ValueError("images must be at least 2x2")
    labels = np.arange(n, dtype=np.int64) % classes
    h2, w2 = height // 2, width // 2
    base = np.empty((n, 1, height, width), dtype=np.float64)
    for q, (rows, cols) in enumerate([
            (slice(0, h2), slice(0, w2)),
            (slice(0, h2), slice(w2, width)),
            (slice(h2, height), slice(0, w2)),
            (slice(h2, height), slice(w2, width))]):
        level = np.where((labels >> q) & 1, float(high), float(low))
        base[:, 0, rows, cols] = level[:, None, None]
    key = rng.derive(seed, rng.TAG_DATA)
    u = rng.uniform_block(key, 0, base.size).reshape(base.shape)
    noisy = base + (2.0 * u - 1.0) * noise
    images = np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.int64)
    return Dataset(images, labels)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded permutation split; first floor(N * fraction) go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    k = int(n * train_fraction)
    if k < 1 or n - k < 1:
        raise ValueError(f"split of {n} at {train_fraction} leaves an empty side")
    perm = rng.permutation(n, rng.derive(seed, rng.TAG_SPLIT))
    tr, va = perm[:k], perm[k:]
    return (Dataset(ds.images[tr], ds.labels[tr]),
            Dataset(ds.images[va], ds.labels[va]))


def to_rgb(ds: Dataset) -> Dataset:
    """Replicate a grayscale channel into three RGB channels."""
    if ds.channels == 3:
        return ds
    if ds.channels != 1:
        raise ValueError(f"cannot promote {ds.channels}-channel data to RGB")
    return Dataset(np.repeat(ds.images, 3, axis=1), ds.labels)


def load_image_dir(root) -> Dataset:
    """Read an RGB dataset from root/<class_name>/<image files>.

    Sorted class directory names define labels 0, 1, ...; files sort
    within each class. All images must share one size. Requires Pillow.
    """
    from PIL import Image

    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class subdirectories under {root}")
    images, labels = [], []
    size = None
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file())
        for fp in files:
            with Image.open(fp) as im:
                arr = np.asarray(im.convert("RGB"))
            if size is None:
                size = arr.shape
            elif arr.shape != size:
                raise ValueError(
                    f"{fp} has size {arr.shape[:2]}, expected {size[:2]}")
            images.append(arr.transpose(2, 0, 1))
            labels.append(label)
    if not images:
        raise ValueError(f"no image files under {root}")
    return Dataset(np.stack(images).astype(np.int64),
                   np.asarray(labels, dtype=np.int64))
