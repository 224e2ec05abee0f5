import gzip
import struct

import numpy as np
import pytest

from metaweight.classifier import CORRECT, INCORRECT, LinearClassifier
from metaweight.tasks import ClassifierTask
from metaweight import meta
from metaweight.tensor import make_rng
from metaweight.vision import (IdxCountMismatch, IdxMagicError, IdxTruncatedError, ImageDataset, class_means,
                               corrupt, load_idx, load_mnist, synth_clusters, write_idx)

# two 2x2 images, pixels chosen by hand
FIX_IMAGES = bytes.fromhex("00000803" "00000002" "00000002" "00000002") + bytes([0, 255, 128, 1, 10, 20, 30, 40])
FIX_LABELS = bytes.fromhex("00000801" "00000002") + bytes([7, 3])


def write_fixture(tmp_path, images=FIX_IMAGES, labels=FIX_LABELS):
    (tmp_path / "img").write_bytes(images)
    (tmp_path / "lab").write_bytes(labels)
    return tmp_path / "img", tmp_path / "lab"


def test_fixture_pixels_round_trip(tmp_path):
    ds = load_idx(*write_fixture(tmp_path))
    assert ds.images.shape == (2, 4)
    assert np.array_equal(np.rint(ds.images * 255).astype(np.uint8), np.array([[0, 255, 128, 1], [10, 20, 30, 40]]))
    assert list(ds.labels) == [7, 3]
    write_idx(tmp_path / "img2", tmp_path / "lab2", np.rint(ds.images * 255).astype(np.uint8), ds.labels, (2, 2))
    assert (tmp_path / "img2").read_bytes() == FIX_IMAGES
    assert (tmp_path / "lab2").read_bytes() == FIX_LABELS


def test_gzipped_files_are_accepted(tmp_path):
    (tmp_path / "img.gz").write_bytes(gzip.compress(FIX_IMAGES))
    (tmp_path / "lab.gz").write_bytes(gzip.compress(FIX_LABELS))
    assert len(load_idx(tmp_path / "img.gz", tmp_path / "lab.gz")) == 2


def test_parse_errors_are_distinct(tmp_path):
    with pytest.raises(IdxMagicError):
        load_idx(*write_fixture(tmp_path, images=FIX_LABELS, labels=FIX_LABELS))
    with pytest.raises(IdxTruncatedError):
        load_idx(*write_fixture(tmp_path, images=FIX_IMAGES[:-1]))
    with pytest.raises(IdxTruncatedError):
        load_idx(*write_fixture(tmp_path, images=FIX_IMAGES[:10]))
    with pytest.raises(IdxCountMismatch):
        load_idx(*write_fixture(tmp_path, labels=bytes.fromhex("00000801" "00000001") + bytes([7])))


def test_load_mnist_split_convention(tmp_path):
    rng = make_rng(0)
    write_idx(tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte",
              rng.integers(0, 256, (12, 784), dtype=np.uint8), np.arange(12) % 10)
    write_idx(tmp_path / "t10k-images-idx3-ubyte", tmp_path / "t10k-labels-idx1-ubyte",
              rng.integers(0, 256, (3, 784), dtype=np.uint8), np.arange(3))
    s = load_mnist(tmp_path)
    assert (len(s["train"]), len(s["valid"]), len(s["test"])) == (10, 2, 3)
    assert list(s["valid"].labels) == [0, 1]


def _ds(n):
    rng = make_rng(1)
    return ImageDataset(rng.random((n, 784)), rng.integers(0, 10, n))


def test_corrupt_exact_counts_and_indicator():
    ds = _ds(50_000)
    c = corrupt(ds, 0.75, make_rng(3))
    assert np.count_nonzero(c.indicator == INCORRECT) == 37_500
    assert np.count_nonzero(c.indicator == CORRECT) == 12_500
    assert np.array_equal(c.indicator == CORRECT, c.shown_labels == ds.labels)
    bad = c.indicator == INCORRECT
    # wrong labels spread over all nine alternatives
    offsets = (c.shown_labels[bad] - ds.labels[bad]) % 10
    assert set(np.unique(offsets)) == set(range(1, 10))


def test_corrupt_edge_fractions_and_determinism():
    ds = _ds(100)
    c0 = corrupt(ds, 0.0, make_rng(0))
    assert np.all(c0.indicator == CORRECT) and np.array_equal(c0.shown_labels, ds.labels)
    assert np.all(corrupt(ds, 1.0, make_rng(0)).indicator == INCORRECT)
    a, b = corrupt(ds, 0.75, make_rng(9)), corrupt(ds, 0.75, make_rng(9))
    assert np.array_equal(a.shown_labels, b.shown_labels)
    with pytest.raises(ValueError):
        corrupt(ds, 1.5, make_rng(0))


def test_synth_clusters_counts_and_determinism():
    a = synth_clusters(7, make_rng(4))
    b = synth_clusters(7, make_rng(4))
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(np.bincount(a.labels), np.full(10, 7))
    assert a.images.min() >= 0 and a.images.max() <= 1
    with pytest.raises(ValueError):
        synth_clusters(0, make_rng(0))


def test_linear_classifier_learns_clean_clusters():
    rng = make_rng(5)
    means = class_means(rng)
    train = synth_clusters(100, rng, means=means)
    test = synth_clusters(50, rng, means=means, split="test")
    model = LinearClassifier()
    task = ClassifierTask(model, train.images, train.labels)
    cfg = meta.MetaTrainConfig(batch_primary=64, max_iters=2000, eval_every=2000)
    res = meta.train(meta.TrainState.create(model.init_params(), None, make_rng(0)), task, None,
                     ClassifierTask(model, test.images, test.labels), None, cfg)
    assert res.best_valid_accuracy >= 95.0
