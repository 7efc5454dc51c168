import gzip
import struct

import numpy as np
import pytest

from splitlab.data import (
    BatchSchedule,
    CountMismatch,
    EmptyPublicSet,
    GAUSSIAN_CENTERS,
    GAUSSIAN_STD,
    GAUSSIAN_WEIGHTS,
    TruncatedPayload,
    WrongMagic,
    dataset_files,
    downsample,
    load_idx,
    make_split,
    toy_dataset,
    write_idx_images,
    write_idx_labels,
)
from splitlab.synth import FASHION_CLASSES, ensure_dataset, make_fashion


def test_hand_built_idx(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    # magic 2051, 2 images, 2 rows, 2 cols, then 8 pixel bytes
    img.write_bytes(bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                           0, 255, 51, 102, 255, 0, 0, 153]))
    lab.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 3]))
    images, labels = load_idx(img, lab)
    expected = np.array([[[0, 255], [51, 102]], [[255, 0], [0, 153]]]) / 255.0
    np.testing.assert_array_equal(images, expected)
    assert labels.tolist() == [7, 3]


def test_idx_errors(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    write_idx_images(img, np.zeros((3, 2, 2)))
    write_idx_labels(lab, [1, 2])
    with pytest.raises(CountMismatch):
        load_idx(img, lab)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">ii", 9999, 0))
    with pytest.raises(WrongMagic):
        load_idx(bad, lab)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">iiii", 2051, 2, 2, 2) + b"\x00" * 5)
    with pytest.raises(TruncatedPayload):
        load_idx(short, lab)


def test_idx_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
    write_idx_images(tmp_path / "a", raw)
    write_idx_labels(tmp_path / "b", np.arange(5))
    images, labels = load_idx(tmp_path / "a", tmp_path / "b")
    write_idx_images(tmp_path / "c.gz", images)
    write_idx_labels(tmp_path / "d.gz", labels)
    again, labels2 = load_idx(tmp_path / "c.gz", tmp_path / "d.gz")
    assert again.tobytes() == images.tobytes()
    assert labels2.tolist() == labels.tolist()
    with gzip.open(tmp_path / "c.gz") as fh:
        assert fh.read()[16:] == raw.tobytes()


def test_split_exclusion_and_disjointness():
    rng = np.random.default_rng(1)
    x = rng.random((1000, 4, 4))
    y = rng.integers(0, 10, size=1000)
    s = make_split(x, y, 0.5, excluded_classes={0}, seed=3)
    assert not (s.y_pub == 0).any()
    assert (s.y_priv == 0).any()
    assert np.intersect1d(s.priv_idx, s.pub_idx).size == 0
    assert s.N == 1000


def test_split_sizes_and_determinism():
    x = np.zeros((60000, 1, 1))
    y = np.zeros(60000, dtype=np.int64)
    s = make_split(x, y, 0.5, seed=9)
    assert len(s.x_priv) == len(s.x_pub) == 30000
    t = make_split(x, y, 0.5, seed=9)
    assert np.array_equal(s.priv_idx, t.priv_idx) and np.array_equal(s.pub_idx, t.pub_idx)


def test_split_errors():
    x = np.zeros((10, 2, 2))
    with pytest.raises(EmptyPublicSet):
        make_split(x, np.zeros(10, dtype=np.int64), 0.5, excluded_classes={0})
    with pytest.raises(ValueError):
        make_split(x, np.zeros(10, dtype=np.int64), 1.0)


def test_toy_line():
    pts, _ = toy_dataset("line2d", 200, seed=0)
    assert np.array_equal(pts[:, 1], 2 * pts[:, 0])


def test_toy_gaussians_means():
    n = 20000
    pts, comp = toy_dataset("gaussians2d", n, seed=4)
    for c, center in enumerate(GAUSSIAN_CENTERS):
        sel = pts[comp == c]
        bound = 5 * GAUSSIAN_STD / np.sqrt(len(sel))
        assert np.all(np.abs(sel.mean(axis=0) - center) < bound)
    np.testing.assert_allclose(np.bincount(comp) / n, GAUSSIAN_WEIGHTS, atol=0.02)


def test_toy_determinism_and_errors():
    for name in ("line2d", "gaussians2d", "ring"):
        a, _ = toy_dataset(name, 50, seed=2)
        b, _ = toy_dataset(name, 50, seed=2)
        assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError, match="unknown toy"):
        toy_dataset("spiral", 10)


def test_batch_schedule():
    sched = BatchSchedule(10, 3, seed=0)
    epoch0 = np.concatenate([sched.indices(i) for i in range(3)])
    assert len(set(epoch0.tolist())) == 9
    again = BatchSchedule(10, 3, seed=0)
    assert np.array_equal(again.indices(4), sched.indices(4))
    assert not np.array_equal(sched.indices(0), sched.indices(3))


def test_downsample():
    x = np.arange(16.0).reshape(1, 4, 4)
    np.testing.assert_array_equal(downsample(x, 2)[0], [[2.5, 4.5], [10.5, 12.5]])


def test_dataset_files_layout(tmp_path):
    img, lab = dataset_files("mnist", "train", tmp_path)
    assert img == tmp_path / "mnist" / "train-images-idx3-ubyte"
    with pytest.raises(ValueError):
        dataset_files("cifar")


def test_synthetic_fashion_layout(tmp_path):
    root = ensure_dataset("fashion-mnist", tmp_path, n_train=200, n_test=50)
    images, labels = load_idx(*dataset_files("fashion-mnist", "train", tmp_path))
    assert images.shape == (200, 28, 28) and set(labels.tolist()) == set(range(10))
    assert len(FASHION_CLASSES) == 10
    assert ensure_dataset("fashion-mnist", tmp_path) == root


def test_synthetic_fashion_classes_distinct():
    (x, y), _ = make_fashion(500, 10, seed=1)
    means = np.stack([x[y == c].mean(axis=0) for c in range(10)])
    dists = np.linalg.norm(means[:, None] - means[None], axis=(2, 3))
    off_diag = dists[~np.eye(10, dtype=bool)]
    assert off_diag.min() > 1.0
