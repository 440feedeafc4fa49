import gzip
import struct

import numpy as np
import pytest

from targettrain import data as D
from targettrain.errors import (
    ConfigurationError,
    ConsistencyError,
    EmptyBatchError,
    FormatError,
    LabelError,
    LengthError,
)

from .conftest import requires_mnist


def idx_images(pixels: np.ndarray) -> bytes:
    n, h, w = pixels.shape
    return struct.pack(">IIII", 2051, n, h, w) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 2049, len(labels)) + labels.tobytes()


def test_parse_idx_empty():
    d = D.parse_idx(struct.pack(">IIII", 2051, 0, 28, 28), struct.pack(">II", 2049, 0))
    assert len(d) == 0 and d.samples.shape == (0, 28, 28, 1)


def test_parse_idx_scaling():
    px = np.array([[[0, 255], [128, 1]]])
    d = D.parse_idx(idx_images(px), idx_labels([7]))
    assert d.samples[0, 0, 0, 0] == 0.0 and d.samples[0, 0, 1, 0] == 1.0
    assert d.samples[0, 1, 0, 0] == pytest.approx(128 / 255)
    assert d.labels.tolist() == [7]


def test_parse_idx_wrong_magic():
    with pytest.raises(FormatError):
        D.parse_idx(struct.pack(">IIII", 2049, 0, 2, 2), idx_labels([]))
    with pytest.raises(FormatError):
        D.parse_idx(idx_images(np.zeros((0, 2, 2))), struct.pack(">II", 2051, 0))


def test_parse_idx_count_mismatch():
    with pytest.raises(ConsistencyError):
        D.parse_idx(idx_images(np.zeros((2, 2, 2))), idx_labels([1]))


def test_parse_idx_truncated():
    blob = idx_images(np.zeros((2, 3, 3)))
    with pytest.raises(LengthError):
        D.parse_idx(blob[:-1], idx_labels([0, 1]))
    with pytest.raises(LengthError):
        D.parse_idx(blob, idx_labels([0, 1])[:-1])
    with pytest.raises(LengthError):
        D.parse_idx(blob[:6], idx_labels([0, 1]))


def test_cifar_single_zero_record():
    d = D.parse_cifar10_bin(bytes(3073))
    assert len(d) == 1 and d.samples.shape == (1, 32, 32, 3)
    assert d.labels.tolist() == [0] and not d.samples.any()


def test_cifar_channel_planar_layout():
    rec = bytearray(3073)
    rec[0] = 3
    rec[1 + 0 * 1024 + 5] = 255  # red plane, row 0, col 5
    rec[1 + 2 * 1024 + 32] = 51  # blue plane, row 1, col 0
    d = D.parse_cifar10_bin(bytes(rec) * 2)
    assert len(d) == 2 and d.labels.tolist() == [3, 3]
    assert d.samples[0, 0, 5, 0] == 1.0
    assert d.samples[0, 1, 0, 2] == pytest.approx(0.2)


def test_cifar_bad_length_and_label():
    with pytest.raises(FormatError):
        D.parse_cifar10_bin(bytes(3072))
    rec = bytearray(3073)
    rec[0] = 10
    with pytest.raises(LabelError):
        D.parse_cifar10_bin(bytes(rec))


def test_read_gzip_fallback(tmp_path):
    px = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    for name, blob in (("t10k-images-idx3-ubyte", idx_images(px)), ("t10k-labels-idx1-ubyte", idx_labels([1, 2]))):
        with gzip.open(tmp_path / (name + ".gz"), "wb") as fh:
            fh.write(blob)
    d = D.load_mnist(tmp_path, "test")
    assert d.samples.shape == (2, 2, 2, 1)


def test_load_mnist_unknown_split():
    with pytest.raises(ConfigurationError):
        D.load_mnist("/nonexistent", "validation")


@requires_mnist
def test_official_mnist_test_split():
    d = D.load_mnist(split="test")
    assert len(d) == 10000 and d.input_shape == (28, 28, 1) and d.k == 10
    assert d.samples.min() >= 0 and d.samples.max() <= 1


def test_dataset_rejects_out_of_range():
    with pytest.raises(FormatError):
        D.Dataset(np.full((1, 1, 1, 1), 1.5, dtype=np.float32), np.zeros(1, dtype=np.int64), 2, "x")
    with pytest.raises(LabelError):
        D.Dataset(np.zeros((1, 1, 1, 1), dtype=np.float32), np.array([2]), 2, "x")


def test_dataset_is_read_only(synth):
    with pytest.raises(ValueError):
        synth.samples[0, 0, 0, 0] = 0.5


# -- synthetic data ----------------------------------------------------------


def test_synth_degenerate_spread():
    d = D.synth_gaussians(20, sigma=1e-9, seed=3)
    means = np.array([[0.25, 0.25], [0.75, 0.75]])
    np.testing.assert_allclose(d.samples.reshape(-1, 2), means[d.labels], atol=1e-6)


def test_synth_is_deterministic():
    a, b = D.synth_gaussians(50, seed=9), D.synth_gaussians(50, seed=9)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_validation():
    with pytest.raises(ConfigurationError):
        D.synth_gaussians(10, sigma=0)
    with pytest.raises(ConfigurationError):
        D.synth_gaussians(10, means=((0.5, 0.5), (0.5, 0.5)))


def test_synth_linear_classifier_accuracy(linear_model, synth):
    assert (linear_model.predict(synth.samples) == synth.labels).mean() >= 0.99


# -- subsets and batches -----------------------------------------------------


def test_balanced_subset_counts():
    d = D.synth_gaussians(100, seed=0)
    sub = D.balanced_subset(d, 31, seed=2)
    assert len(sub) == 31
    assert sorted(np.bincount(sub.labels).tolist()) == [15, 16]
    again = D.balanced_subset(d, 31, seed=2)
    np.testing.assert_array_equal(sub.samples, again.samples)


def _toy(n):
    return D.Dataset(np.zeros((n, 1, 1, 1), dtype=np.float32), np.zeros(n, dtype=np.int64), 1, "toy")


def test_batches_drop_last():
    assert [len(b) for b in D.batch_indices(10, D.BatchPlan(5, drop_last=True))] == [5, 5]


def test_batches_keep_last():
    assert [len(b) for b in D.batch_indices(10, D.BatchPlan(3))] == [3, 3, 3, 1]


def test_batches_partition_epoch():
    idx = np.concatenate(D.batch_indices(37, D.BatchPlan(8, seed=4), epoch=2))
    assert sorted(idx.tolist()) == list(range(37))


def test_batches_empty_epoch():
    with pytest.raises(EmptyBatchError):
        D.batch_indices(3, D.BatchPlan(5, drop_last=True))


def test_batches_bad_size():
    with pytest.raises(ConfigurationError):
        D.batch_indices(3, D.BatchPlan(0))


def test_batches_are_seeded():
    plan = D.BatchPlan(4, seed=11)
    a = [b.tolist() for b in D.batch_indices(20, plan, 0)]
    assert a == [b.tolist() for b in D.batch_indices(20, plan, 0)]
    assert a != [b.tolist() for b in D.batch_indices(20, plan, 1)]


def test_make_batches_yields_pairs(synth):
    batches = list(D.make_batches(synth, D.BatchPlan(128, seed=1)))
    assert sum(len(y) for _, y in batches) == len(synth)
    assert all(x.shape[0] == len(y) for x, y in batches)
