"""CIFAR-format binary readers, normalization statistics and augmentation.

A record is a label byte (two for CIFAR-100: coarse then fine) followed by the
image as three plane-major channels of ``side * side`` unsigned bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, FormatError

VARIANTS = ("cifar10", "cifar100", "generic-dir")
STATS_FILE = "channel_stats.json"

_LAYOUTS = {
    # variant: (label bytes, classes, train files, test files, conventional subdirectory)
    "cifar10": (1, 10, [f"data_batch_{i}.bin" for i in range(1, 6)], ["test_batch.bin"], "cifar-10-batches-bin"),
    "cifar100": (2, 100, ["train.bin"], ["test.bin"], "cifar-100-binary"),
    "generic-dir": (1, None, ["train.bin"], ["test.bin"], None),
}


@dataclass
class Dataset:
    images: np.ndarray  # uint8 (N, 3, H, W)
    labels: np.ndarray  # int64 (N,)
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, count: int | None, rng: np.random.Generator | None = None) -> "Dataset":
        """First ``count`` examples, or a random ``count`` of them when ``rng`` is given."""
        if count is None or count >= len(self):
            return self
        idx = np.sort(rng.choice(len(self), count, replace=False)) if rng is not None else np.arange(count)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


@dataclass
class Splits:
    train: Dataset
    test: Dataset
    mean: np.ndarray  # per-channel statistics of train pixels in [0, 1]
    std: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


@dataclass
class Batch:
    images: np.ndarray  # normalized float (N, 3, H, W)
    labels: np.ndarray


def record_size(variant: str, side: int = 32) -> int:
    return _LAYOUTS[variant][0] + 3 * side * side


def decode_records(blob: bytes, variant: str = "cifar10", side: int = 32,
                   num_classes: int | None = None, source: str = "<bytes>"):
    """Split raw bytes into uint8 images (N, 3, side, side) and int64 labels."""
    label_bytes, default_classes = _LAYOUTS[variant][:2]
    num_classes = num_classes or default_classes
    size = record_size(variant, side)
    if len(blob) % size:
        offset = len(blob) - len(blob) % size
        raise FormatError(f"{source}: incomplete record at byte offset {offset} "
                          f"({len(blob)} bytes is not a multiple of {size})")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, size)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        rec = int(bad[0])
        raise FormatError(f"{source}: label {labels[rec]} out of range for {num_classes} classes "
                          f"in record {rec} (byte offset {rec * size + label_bytes - 1})")
    images = raw[:, label_bytes:].reshape(-1, 3, side, side).copy()
    return images, labels


def encode_records(images: np.ndarray, labels: np.ndarray, variant: str = "cifar10",
                   coarse_labels: np.ndarray | None = None) -> bytes:
    """Inverse of :func:`decode_records`, used to write synthetic or converted data."""
    images = np.asarray(images, dtype=np.uint8)
    n = len(images)
    cols = [np.asarray(labels, dtype=np.uint8).reshape(n, 1)]
    if _LAYOUTS[variant][0] == 2:
        coarse = np.zeros(n, np.uint8) if coarse_labels is None else np.asarray(coarse_labels, np.uint8)
        cols.insert(0, coarse.reshape(n, 1))
    cols.append(images.reshape(n, -1))
    return np.concatenate(cols, axis=1).tobytes()


def _resolve_dir(path: Path, variant: str, wanted: str) -> Path:
    sub = _LAYOUTS[variant][4]
    if not (path / wanted).exists() and sub and (path / sub / wanted).exists():
        return path / sub
    return path


def _read_files(root: Path, names, variant, side, num_classes) -> Dataset:
    images, labels = [], []
    for name in names:
        f = root / name
        if not f.exists():
            raise FileNotFoundError(f"missing data file {f}")
        im, lab = decode_records(f.read_bytes(), variant, side, num_classes, str(f))
        images.append(im)
        labels.append(lab)
    return Dataset(np.concatenate(images), np.concatenate(labels), num_classes)


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of uint8 images after scaling to [0, 1]."""
    x = images.astype(np.float64) / 255.0
    return x.mean(axis=(0, 2, 3)), x.std(axis=(0, 2, 3))


def _cached_stats(root: Path, key: str, train: Dataset):
    cache = root / STATS_FILE
    table = {}
    if cache.exists():
        table = json.loads(cache.read_text())
        if key in table:
            return np.array(table[key]["mean"]), np.array(table[key]["std"])
    mean, std = channel_stats(train.images)
    table[key] = {"mean": mean.tolist(), "std": std.tolist(), "count": len(train)}
    try:
        cache.write_text(json.dumps(table, indent=1))
    except OSError:
        pass  # read-only data directory: recompute next time
    return mean, std


def load_cifar(path, variant: str = "cifar10", side: int = 32, num_classes: int | None = None) -> Splits:
    """Load train and test splits from a directory of CIFAR-format binaries.

    ``generic-dir`` reads ``train.bin`` and ``test.bin`` in the CIFAR-10 record
    layout with a configurable image ``side`` and ``num_classes``.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown dataset {variant!r}; expected one of {VARIANTS}")
    _, default_classes, train_files, test_files, _ = _LAYOUTS[variant]
    if variant != "generic-dir":
        side = 32
        num_classes = default_classes
    elif num_classes is None:
        raise ConfigurationError("generic-dir datasets need num_classes")
    root = _resolve_dir(Path(path), variant, train_files[0])
    train = _read_files(root, train_files, variant, side, num_classes)
    test = _read_files(root, test_files, variant, side, num_classes)
    mean, std = _cached_stats(root, f"{variant}:{side}:{num_classes}", train)
    return Splits(train, test, mean, std)


def to_unit(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    return images.astype(dtype) / dtype(255.0)


def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    """(x - mean) / std per channel; uint8 input is scaled to [0, 1] first."""
    x = to_unit(images) if images.dtype == np.uint8 else images
    mean = np.asarray(mean, dtype=x.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=x.dtype).reshape(1, -1, 1, 1)
    return (x - mean) / std


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4,
            flips: np.ndarray | None = None, offsets: np.ndarray | None = None) -> np.ndarray:
    """Random horizontal flip (p=0.5), zero padding by ``pad`` and a random crop back to size.

    ``flips`` (bool per image) and ``offsets`` (row, col per image, each in
    ``[0, 2 * pad]``) override the random draws; offsets of ``pad`` give the
    centre crop.
    """
    n, c, h, w = images.shape
    if flips is None:
        flips = rng.random(n) < 0.5
    if offsets is None:
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.where(np.asarray(flips)[:, None, None, None], images[..., ::-1], images)
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    rows = offsets[:, 0][:, None] + np.arange(h)[None, :]  # (n, h)
    cols = offsets[:, 1][:, None] + np.arange(w)[None, :]
    idx_n = np.arange(n)[:, None, None, None]
    idx_c = np.arange(c)[None, :, None, None]
    return padded[idx_n, idx_c, rows[:, None, :, None], cols[:, None, None, :]]


def make_batch(data: Dataset, idx: np.ndarray, mean, std, rng: np.random.Generator | None = None,
               train_augment: bool = False) -> Batch:
    x = to_unit(data.images[idx])
    if train_augment:
        x = augment(x, rng)
    return Batch(normalize(x, mean, std), data.labels[idx])


def batch_indices(count: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index arrays covering ``range(count)``, shuffled when ``rng`` is given; last batch may be short."""
    order = rng.permutation(count) if rng is not None else np.arange(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]
