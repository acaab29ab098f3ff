"""Small image-classification datasets: IDX / CIFAR-10 binary loaders,
train/val splitting, normalization and augmentation."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CIFAR_RECORD = 3073
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_ENV = "SPIKENAS_DATA"


class DatasetFormatError(ValueError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64
    name: str = "dataset"
    split: str = "train"
    num_classes: int = 10
    normalized: bool = False

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetFormatError("label out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "ImageDataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx], split=split or self.split)


def data_root(explicit: str | os.PathLike | None = None) -> Path | None:
    """Dataset root: explicit argument, else the ``SPIKENAS_DATA`` environment variable."""
    root = explicit or os.environ.get(DATA_ENV)
    return Path(root) if root else None


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def _read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header at offset {len(raw)}")
    zero, dtype_code, ndim = raw[0] << 8 | raw[1], raw[2], raw[3]
    if zero != 0 or dtype_code != 0x08:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4].hex()} at offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated dimension list at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims)) if dims else 0
    if len(raw) - header < n:
        raise DatasetFormatError(f"{path}: truncated data at offset {len(raw)}, expected {header + n} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name: str = "idx", num_classes: int = 10) -> ImageDataset:
    """Parse an IDX image/label pair; grayscale images are replicated to 3 channels."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise DatasetFormatError(f"{images_path}: expected (N, H, W) images, got {images.shape}")
    if labels.ndim != 1:
        raise DatasetFormatError(f"{labels_path}: expected a label vector, got {labels.shape}")
    if len(labels) != len(images):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    x = np.repeat(images[:, None].astype(np.float32) / 255.0, 3, axis=1)
    return ImageDataset(x, labels.astype(np.int64), name, "train", num_classes)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_cifar_binary(paths, name: str = "cifar10", split: str = "train") -> ImageDataset:
    """Load one or more CIFAR-10 binary batch files (1 label byte + 3072 pixel bytes per record)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for p in paths:
        raw = Path(p).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise DatasetFormatError(f"{p}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(xs).astype(np.float32) / 255.0
    return ImageDataset(images, np.concatenate(ys), name, split, 10)


def write_cifar_binary(path, images_u8: np.ndarray, labels) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_u8], axis=1)
    Path(path).write_bytes(rec.tobytes())


def find_cifar10(root=None) -> tuple[list[Path], list[Path]] | None:
    """Locate ``data_batch_*.bin`` / ``test_batch.bin`` under the data root."""
    root = data_root(root)
    if root is None:
        return None
    for d in (root, root / "cifar-10-batches-bin", root / "cifar10"):
        train = sorted(d.glob("data_batch_*.bin"))
        if train:
            return train, sorted(d.glob("test_batch.bin"))
    return None


# ---------------------------------------------------------------------------
# splitting and preprocessing
# ---------------------------------------------------------------------------


def split_train_val(dataset: ImageDataset, ratio: float = 0.8, seed: int = 0) -> tuple[ImageDataset, ImageDataset]:
    """Seeded shuffle, then the first ``ratio`` share becomes the training split."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two samples to split")
    order = np.random.default_rng(seed).permutation(n)
    cut = min(max(int(round(n * ratio)), 1), n - 1)
    return dataset.subset(np.sort(order[:cut]), "train"), dataset.subset(np.sort(order[cut:]), "val")


def stratified_subset(dataset: ImageDataset, per_class: int, seed: int = 0) -> ImageDataset:
    """Deterministically keep ``per_class`` samples of every class."""
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) > per_class:
            idx = np.sort(rng.choice(idx, per_class, replace=False))
        keep.append(idx)
    return dataset.subset(np.sort(np.concatenate(keep)))


def channel_stats(dataset: ImageDataset) -> tuple[np.ndarray, np.ndarray]:
    return dataset.images.mean(axis=(0, 2, 3)), dataset.images.std(axis=(0, 2, 3)) + 1e-8


def normalize(dataset: ImageDataset, mean, std) -> ImageDataset:
    """Per-channel standardization with statistics taken from the training split."""
    if dataset.normalized:
        raise ValueError(f"{dataset.name}/{dataset.split} is already normalized")
    x = (dataset.images - np.asarray(mean, np.float32)[:, None, None]) / np.asarray(std, np.float32)[:, None, None]
    return replace(dataset, images=x.astype(np.float32), normalized=True)


@dataclass
class AugmentConfig:
    crop: bool = True  # zero-pad to 40x40, random 32x32 crop
    flip: bool = True  # horizontal flip with probability 0.5
    cutout: int = 16  # side of the zeroed square, 0 disables
    pad: int = 4


def augment(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Return an augmented copy of ``batch`` (N, C, H, W); labels are untouched."""
    out = np.array(batch, copy=True)
    n, _, h, w = out.shape
    if cfg.crop and cfg.pad:
        p = cfg.pad
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        offs = rng.integers(0, 2 * p + 1, size=(n, 2))
        for i, (dy, dx) in enumerate(offs):
            out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    if cfg.flip:
        flip = rng.random(n) < 0.5
        out[flip] = out[flip, :, :, ::-1]
    if cfg.cutout:
        half = cfg.cutout // 2
        centers = np.stack([rng.integers(0, h, size=n), rng.integers(0, w, size=n)], axis=1)
        for i, (cy, cx) in enumerate(centers):
            out[i, :, max(cy - half, 0):min(cy + half, h), max(cx - half, 0):min(cx + half, w)] = 0
    return out


def make_augment_fn(cfg: AugmentConfig):
    return lambda images, rng: augment(images, cfg, rng)


def synthetic_images(n: int, num_classes: int = 10, size: int = 32, seed: int = 0, noise: float = 0.6,
                     name: str = "synthetic") -> ImageDataset:
    """Class-conditional random textures for smoke tests and toy runs.

    Each class owns a fixed low-frequency colour pattern; samples add a
    random shift and pixel noise. Classes are balanced.
    """
    rng = np.random.default_rng(seed)
    proto_rng = np.random.default_rng(12345)
    coarse = proto_rng.random((num_classes, 3, 4, 4))
    protos = np.repeat(np.repeat(coarse, size // 4, axis=2), size // 4, axis=3)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    shifts = rng.integers(-2, 3, size=(n, 2))
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i, (c, (dy, dx)) in enumerate(zip(labels, shifts)):
        images[i] = np.roll(protos[c], (dy, dx), axis=(1, 2))
    images += noise * rng.standard_normal(images.shape).astype(np.float32)
    return ImageDataset(np.clip(images, 0, 1).astype(np.float32), labels.astype(np.int64), name, "train", num_classes)
