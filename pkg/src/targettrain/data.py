"""Dataset containers, IDX / CIFAR-10 binary parsers, synthetic data and batching."""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    EmptyBatchError,
    FormatError,
    LabelError,
    LengthError,
)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (n, h, w, c) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64 in [0, k)
    k: int
    name: str

    def __post_init__(self):
        if self.samples.ndim != 4:
            raise FormatError(f"samples must be (n, h, w, c), got {self.samples.shape}")
        if len(self.samples) != len(self.labels):
            raise ConsistencyError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise LabelError(f"labels outside [0, {self.k})")
        if self.samples.size and (self.samples.min() < 0 or self.samples.max() > 1):
            raise FormatError("pixel values outside [0, 1]")
        self.samples.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.samples.shape[1:])

    def take(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.samples[idx].copy(), self.labels[idx].copy(), self.k, name or self.name)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int = 0
    drop_last: bool = False


def _read_u32(buf: bytes, offset: int) -> int:
    return int.from_bytes(buf[offset : offset + 4], "big")


def _parse_idx_header(buf: bytes, magic: int, what: str) -> tuple[int, tuple[int, ...], int]:
    if len(buf) < 4:
        raise LengthError(f"{what} stream shorter than its magic number")
    got = _read_u32(buf, 0)
    if got != magic:
        raise FormatError(f"{what} stream has magic {got}, expected {magic}")
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise LengthError(f"{what} stream truncated inside its header")
    dims = tuple(_read_u32(buf, 4 + 4 * i) for i in range(ndim))
    return dims[0], dims[1:], header


def parse_idx(images: bytes, labels: bytes, name: str = "mnist", k: int = 10) -> Dataset:
    """Decode an IDX image/label pair (e.g. MNIST) into a dataset scaled to [0, 1]."""
    n_img, img_dims, img_off = _parse_idx_header(images, IDX_IMAGES_MAGIC, "image")
    n_lab, _, lab_off = _parse_idx_header(labels, IDX_LABELS_MAGIC, "label")
    if n_img != n_lab:
        raise ConsistencyError(f"{n_img} images but {n_lab} labels")
    h, w = img_dims if len(img_dims) == 2 else (img_dims + (1, 1))[:2]
    need = img_off + n_img * h * w
    if len(images) < need:
        raise LengthError(f"image stream has {len(images)} bytes, needs {need}")
    if len(labels) < lab_off + n_lab:
        raise LengthError(f"label stream has {len(labels)} bytes, needs {lab_off + n_lab}")
    pix = np.frombuffer(images, dtype=np.uint8, count=n_img * h * w, offset=img_off)
    x = (pix.reshape(n_img, h, w, 1).astype(np.float32) / np.float32(255.0))
    y = np.frombuffer(labels, dtype=np.uint8, count=n_lab, offset=lab_off).astype(np.int64)
    return Dataset(x, y, k, name)


def parse_cifar10_bin(data: bytes, name: str = "cifar10") -> Dataset:
    """Decode CIFAR-10 binary records (1 label byte + 3072 channel-planar pixel bytes)."""
    if len(data) % CIFAR_RECORD:
        raise FormatError(f"CIFAR-10 stream length {len(data)} is not a multiple of {CIFAR_RECORD}")
    n = len(data) // CIFAR_RECORD
    rec = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    y = rec[:, 0].astype(np.int64)
    if n and y.max() >= 10:
        i = int(np.argmax(y >= 10))
        raise LabelError(f"label byte {int(y[i])} at record {i} is not a CIFAR-10 class")
    x = rec[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float32) / np.float32(255.0)
    return Dataset(np.ascontiguousarray(x), y, 10, name)


def _read_maybe_gz(path: Path) -> bytes:
    for cand in (path, path.with_name(path.name + ".gz")):
        if cand.exists():
            if cand.suffix == ".gz":
                with gzip.open(cand, "rb") as fh:
                    return fh.read()
            return cand.read_bytes()
    raise FileNotFoundError(f"neither {path} nor {path}.gz exists")


def default_mnist_dir() -> Path:
    env = os.environ.get("TARGETTRAIN_MNIST_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "mnist"


def load_mnist(directory=None, split: str = "train") -> Dataset:
    """Load an MNIST split from IDX files (plain or ``.gz``)."""
    if split not in MNIST_FILES:
        raise ConfigurationError(f"unknown MNIST split {split!r}")
    root = Path(directory) if directory is not None else default_mnist_dir()
    img, lab = MNIST_FILES[split]
    return parse_idx(_read_maybe_gz(root / img), _read_maybe_gz(root / lab), name=f"mnist-{split}")


def load_cifar10(directory, split: str = "test") -> Dataset:
    root = Path(directory)
    files = (CIFAR_TEST_FILE,) if split == "test" else CIFAR_TRAIN_FILES
    blob = b"".join(_read_maybe_gz(root / f) for f in files)
    return parse_cifar10_bin(blob, name=f"cifar10-{split}")


def synth_gaussians(
    n_per_class: int,
    means=((0.25, 0.25), (0.75, 0.75)),
    sigma: float = 0.05,
    seed: int = 0,
) -> Dataset:
    """Isotropic 2-D Gaussian blobs, one per class, clipped to the unit square.

    Samples are shaped ``(n, 1, 1, 2)`` so they flow through the same
    channels-last model code as images.
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[1] != 2 or len(means) < 2:
        raise ConfigurationError("means must be a list of at least two 2-d points")
    if len({tuple(m) for m in means.tolist()}) != len(means):
        raise ConfigurationError("class means must be distinct")
    rng = np.random.default_rng(seed)
    k = len(means)
    xs = [means[c] + sigma * rng.standard_normal((n_per_class, 2)) for c in range(k)]
    x = np.clip(np.concatenate(xs), 0.0, 1.0).astype(np.float32)
    y = np.repeat(np.arange(k), n_per_class)
    order = rng.permutation(len(y))
    return Dataset(x[order].reshape(-1, 1, 1, 2), y[order].astype(np.int64), k, "synth")


def balanced_subset(d: Dataset, n: int, seed: int = 0, name: str | None = None) -> Dataset:
    """First ``n // k`` samples of each class in a seeded permutation order."""
    if n <= 0:
        raise ConfigurationError("subset size must be positive")
    if n >= len(d):
        return d
    per_class, extra = divmod(n, d.k)
    order = np.random.default_rng(seed).permutation(len(d))
    counts = np.zeros(d.k, dtype=np.int64)
    quota = np.full(d.k, per_class) + (np.arange(d.k) < extra)
    chosen = []
    for i in order:
        c = d.labels[i]
        if counts[c] < quota[c]:
            counts[c] += 1
            chosen.append(i)
            if len(chosen) == n:
                break
    return d.take(np.array(chosen), name=name or f"{d.name}[{n}]")


def batch_indices(n: int, plan: BatchPlan, epoch: int = 0) -> list[np.ndarray]:
    if plan.batch_size < 1:
        raise ConfigurationError("batch size must be at least 1")
    if plan.drop_last and plan.batch_size > n:
        raise EmptyBatchError(f"batch size {plan.batch_size} exceeds {n} samples with drop-last")
    perm = np.random.default_rng([plan.seed, epoch]).permutation(n)
    stop = (n // plan.batch_size) * plan.batch_size if plan.drop_last else n
    return [perm[i : min(i + plan.batch_size, stop)] for i in range(0, stop, plan.batch_size)]


def make_batches(d: Dataset, plan: BatchPlan, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(samples, labels)`` batches of one epoch in seeded order."""
    for idx in batch_indices(len(d), plan, epoch):
        yield d.samples[idx], d.labels[idx]
