"""Dataset I/O: IDX files, private/public partitioning, batching and toy data."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

DATA_DIR_ENV = "SPLITLAB_DATA"

# standard file names inside <data_dir>/<dataset>/
IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
DATASETS = ("mnist", "fashion-mnist")


class IdxError(ValueError):
    pass


class WrongMagic(IdxError):
    pass


class TruncatedPayload(IdxError):
    pass


class CountMismatch(IdxError):
    pass


class EmptyPublicSet(ValueError):
    pass


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedPayload(f"{path}: header is truncated")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != expected_magic:
        raise WrongMagic(f"{path}: magic {magic}, expected {expected_magic}")
    if magic == IMAGE_MAGIC:
        if len(raw) < 16:
            raise TruncatedPayload(f"{path}: header is truncated")
        rows, cols = struct.unpack(">ii", raw[8:16])
        shape, offset = (count, rows, cols), 16
    else:
        shape, offset = (count,), 8
    need = int(np.prod(shape))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    if payload.size < need:
        raise TruncatedPayload(f"{path}: payload has {payload.size} bytes, header promises {need}")
    return payload[:need].reshape(shape)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled into [0, 1] (float64, N x H x W) and integer labels."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx_images(path, images) -> None:
    """Write N x H x W images; float input in [0, 1] is quantised to bytes."""
    arr = np.asarray(images)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    n, rows, cols = arr.shape
    _write(path, struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols) + arr.tobytes())


def write_idx_labels(path, labels) -> None:
    arr = np.asarray(labels).astype(np.uint8)
    _write(path, struct.pack(">ii", LABEL_MAGIC, len(arr)) + arr.tobytes())


def _write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if path.suffix == ".gz":
        with gzip.open(tmp, "wb") as fh:
            fh.write(payload)
    else:
        tmp.write_bytes(payload)
    os.replace(tmp, path)


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "splitlab"))


def dataset_files(name: str, split: str = "train", data_dir=None) -> tuple[Path, Path]:
    """Image and label paths of ``name``; gzipped copies are used when present."""
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")
    root = Path(data_dir) if data_dir else default_data_dir()
    out = []
    for fname in IDX_FILES[split]:
        plain = root / name / fname
        gz = plain.with_name(fname + ".gz")
        out.append(gz if not plain.exists() and gz.exists() else plain)
    return out[0], out[1]


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool N x H x W images by an integer factor."""
    if factor == 1:
        return images
    n, h, w = images.shape
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} is not divisible by {factor}")
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


# -- partitioning ------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    x_priv: np.ndarray
    y_priv: np.ndarray
    x_pub: np.ndarray
    y_pub: np.ndarray
    priv_idx: np.ndarray
    pub_idx: np.ndarray
    excluded_classes: frozenset
    N: int

    @property
    def image_shape(self) -> tuple:
        return self.x_priv.shape[1:]

    def check(self) -> None:
        if np.intersect1d(self.priv_idx, self.pub_idx).size:
            raise AssertionError("private and public partitions overlap")
        if self.excluded_classes and np.isin(self.y_pub, list(self.excluded_classes)).any():
            raise AssertionError("public set contains an excluded class")
        for x in (self.x_priv, self.x_pub):
            if x.size and (x.min() < 0 or x.max() > 1):
                raise AssertionError("pixels outside [0, 1]")


def make_split(images: np.ndarray, labels: np.ndarray, priv_fraction: float = 0.5,
               excluded_classes: Iterable[int] = (), seed: int = 0) -> DatasetSplit:
    """Seeded disjoint private/public partition; excluded classes leave the public side only."""
    if not 0 < priv_fraction < 1:
        raise ValueError(f"priv_fraction must lie in (0, 1), got {priv_fraction}")
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    n = len(images)
    excluded = frozenset(int(c) for c in excluded_classes)
    order = np.random.default_rng(seed).permutation(n)
    n_priv = int(round(priv_fraction * n))
    priv_idx = np.sort(order[:n_priv])
    pub_idx = np.sort(order[n_priv:])
    if excluded:
        pub_idx = pub_idx[~np.isin(labels[pub_idx], list(excluded))]
    if pub_idx.size == 0:
        raise EmptyPublicSet("class exclusion leaves no public samples")
    split = DatasetSplit(images[priv_idx], labels[priv_idx], images[pub_idx], labels[pub_idx],
                         priv_idx, pub_idx, excluded, n)
    split.check()
    return split


class BatchSchedule:
    """Sequential fixed-size batches over a seeded per-epoch shuffle.

    The trailing partial batch of an epoch is dropped so every batch has
    ``batch_size`` rows.
    """

    def __init__(self, n: int, batch_size: int, seed: int):
        if batch_size < 1 or batch_size > n:
            raise ValueError(f"batch size {batch_size} invalid for {n} samples")
        self.n, self.batch_size, self.seed = n, batch_size, seed
        self.per_epoch = n // batch_size
        self._epoch, self._perm = -1, None

    def indices(self, iteration: int) -> np.ndarray:
        epoch, pos = divmod(iteration, self.per_epoch)
        if epoch != self._epoch:
            rng = np.random.default_rng([self.seed, epoch])
            self._epoch, self._perm = epoch, rng.permutation(self.n)
        return self._perm[pos * self.batch_size:(pos + 1) * self.batch_size]


# -- toy data ----------------------------------------------------------------

GAUSSIAN_CENTERS = np.array([[0.25, 0.3], [0.7, 0.65], [0.35, 0.8]])
GAUSSIAN_WEIGHTS = np.array([0.5, 0.3, 0.2])
GAUSSIAN_STD = 0.05
TOY_NAMES = ("line2d", "gaussians2d", "ring")


def toy_dataset(name: str, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form 2-D point sets inside the unit square; returns (points, labels).

    line2d: x ~ U(0, 0.5), y = 2x. gaussians2d: mixture of ``GAUSSIAN_CENTERS``
    with weights ``GAUSSIAN_WEIGHTS`` and std ``GAUSSIAN_STD``; label = component.
    ring: radius 0.3 +- N(0, 0.02) around (0.5, 0.5); label = upper half.
    """
    rng = np.random.default_rng(seed)
    if name == "line2d":
        x = rng.uniform(0, 0.5, size=n)
        return np.stack([x, 2 * x], axis=1), np.zeros(n, dtype=np.int64)
    if name == "gaussians2d":
        comp = rng.choice(len(GAUSSIAN_WEIGHTS), size=n, p=GAUSSIAN_WEIGHTS)
        pts = GAUSSIAN_CENTERS[comp] + rng.normal(0, GAUSSIAN_STD, size=(n, 2))
        return pts, comp.astype(np.int64)
    if name == "ring":
        theta = rng.uniform(0, 2 * np.pi, size=n)
        r = 0.3 + rng.normal(0, 0.02, size=n)
        pts = 0.5 + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        return pts, (theta < np.pi).astype(np.int64)
    raise ValueError(f"unknown toy dataset {name!r}; expected one of {TOY_NAMES}")


def linearly_separable(n: int, dim: int = 8, seed: int = 0, margin: float = 0.2):
    """Two classes in [0, 1]^dim split by a fixed hyperplane with a margin."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)
    w /= np.linalg.norm(w)
    pts = []
    while sum(len(p) for p in pts) < n:
        x = rng.uniform(0, 1, size=(4 * n, dim))
        s = (x - 0.5) @ w
        pts.append(x[np.abs(s) > margin / 2])
    x = np.concatenate(pts)[:n]
    return x, ((x - 0.5) @ w > 0).astype(np.int64)


def load_dataset(name: str, split: str = "train", data_dir=None,
                 image_size: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Load a named IDX dataset, optionally mean-pooled to ``image_size``."""
    images, labels = load_idx(*dataset_files(name, split, data_dir))
    if image_size and image_size != images.shape[1]:
        images = downsample(images, images.shape[1] // image_size)
    return images, labels
