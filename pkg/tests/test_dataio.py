import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sagan.dataio import (
    TEST_SEEN,
    TEST_UNSEEN,
    TRAIN,
    BatchIterator,
    DataError,
    FormatError,
    SyntheticSpec,
    ZslDataset,
    batch_iterator,
    compute_prototypes,
    load_feature_file,
    load_label_file,
    load_split_file,
    make_synthetic_dataset,
    save_feature_file,
    save_label_file,
    save_split_file,
)


def _toy(features, labels, n_classes, seen, split=None):
    features = np.asarray(features, np.float32)
    labels = np.asarray(labels)
    seen = np.asarray(seen)
    unseen = np.setdiff1d(np.arange(n_classes), seen)
    if split is None:
        split = np.where(np.isin(labels, seen), TRAIN, TEST_UNSEEN).astype(np.int8)
    return ZslDataset(features, labels, np.eye(n_classes, dtype=np.float32) + 0.1, seen, unseen, split)


# -- binary formats ------------------------------------------------------------------

@given(arrays(np.float32, st.tuples(st.integers(0, 6), st.integers(0, 5)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_feature_roundtrip(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("f") / "m.zsf"
    save_feature_file(p, m)
    back = load_feature_file(p)
    assert back.shape == m.shape
    assert back.tobytes() == m.astype("<f4").tobytes()


def test_feature_file_layout(tmp_path):
    p = tmp_path / "m.zsf"
    save_feature_file(p, np.array([[1.0, 2.0]], np.float32))
    raw = p.read_bytes()
    assert raw[:4] == b"ZSF1"
    assert struct.unpack_from("<II", raw, 4) == (1, 2)
    assert np.frombuffer(raw, "<f4", offset=12).tolist() == [1.0, 2.0]


def test_short_payload_is_format_error(tmp_path):
    p = tmp_path / "bad.zsf"
    p.write_bytes(b"ZSF1" + struct.pack("<II", 10, 10) + np.zeros(99, "<f4").tobytes())
    with pytest.raises(FormatError, match="offset"):
        load_feature_file(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.zsf"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(FormatError, match="offset 0"):
        load_feature_file(p)


def test_empty_matrix(tmp_path):
    p = tmp_path / "e.zsf"
    save_feature_file(p, np.zeros((0, 7), np.float32))
    assert load_feature_file(p).shape == (0, 7)


@given(st.lists(st.integers(0, 2 ** 32 - 1), max_size=30))
def test_label_roundtrip(tmp_path_factory, labels):
    p = tmp_path_factory.mktemp("l") / "y.zsl"
    save_label_file(p, labels)
    assert load_label_file(p).tolist() == labels


def test_label_truncated(tmp_path):
    p = tmp_path / "y.zsl"
    p.write_bytes(b"ZSL1" + struct.pack("<I", 3) + bytes(8))
    with pytest.raises(FormatError):
        load_label_file(p)


def test_split_file_roundtrip_and_errors(tmp_path):
    p = tmp_path / "split.txt"
    save_split_file(p, [0, 2, 3], [1, 4])
    s = load_split_file(p)
    assert s["seen"].tolist() == [0, 2, 3] and s["unseen"].tolist() == [1, 4]
    p.write_text("seen:\n0 1\nunseen:\n2 x\n")
    with pytest.raises(FormatError, match=":4:"):
        load_split_file(p)
    p.write_text("seen:\n0 1\n")
    with pytest.raises(FormatError, match="unseen"):
        load_split_file(p)


# -- dataset ----------------------------------------------------------------------------

def test_dataset_rejects_overlapping_classes():
    with pytest.raises(DataError):
        ZslDataset(np.zeros((2, 2), np.float32), np.array([0, 1]), np.ones((2, 2), np.float32),
                   np.array([0, 1]), np.array([1]), np.array([TRAIN, TRAIN], np.int8))


def test_dataset_rejects_unseen_in_train():
    with pytest.raises(DataError):
        _toy(np.zeros((2, 2)), [0, 1], 2, [0], split=np.array([TRAIN, TRAIN], np.int8))


def test_dataset_rejects_zero_embedding_row():
    with pytest.raises(DataError, match="all zero"):
        ZslDataset(np.zeros((1, 2), np.float32), np.array([0]), np.array([[1.0], [0.0]], np.float32),
                   np.array([0]), np.array([1]), np.array([TRAIN], np.int8))


def test_dataset_save_load_roundtrip(tmp_path, tiny_ds):
    tiny_ds.save(tmp_path)
    back = ZslDataset.load(tmp_path)
    for f in ("features", "labels", "embeddings", "seen_classes", "unseen_classes", "split"):
        np.testing.assert_array_equal(getattr(back, f), getattr(tiny_ds, f))


def test_missing_dataset_file(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        ZslDataset.load(tmp_path)


# -- prototypes ---------------------------------------------------------------------------

def test_prototype_single_sample_and_pair():
    ds = _toy([[1.0, 5.0], [0.0, 0.0], [2.0, 2.0], [9.0, 9.0]], [0, 1, 1, 2], 3, [0, 1])
    t = compute_prototypes(ds)
    np.testing.assert_array_equal(t.lookup([0, 1]), [[1.0, 5.0], [1.0, 1.0]])


def test_prototypes_match_accumulate_and_divide(rng):
    x = rng.standard_normal((40, 3))
    y = rng.integers(0, 4, 40)
    y[:4] = np.arange(4)
    ds = _toy(x, y, 5, [0, 1, 2, 3])
    t = compute_prototypes(ds)
    for c in range(4):
        acc, n = np.zeros(3), 0
        for xi, yi in zip(x, y):
            if yi == c:
                acc += xi
                n += 1
        np.testing.assert_allclose(t.lookup([c])[0], acc / n, rtol=1e-5, atol=1e-6)


def test_prototypes_ignore_test_samples():
    ds = _toy([[0.0], [10.0], [4.0]], [0, 0, 1], 2, [0],
              split=np.array([TRAIN, TEST_SEEN, TEST_UNSEEN], np.int8))
    assert compute_prototypes(ds).lookup([0])[0, 0] == 0.0


def test_prototype_missing_class():
    ds = _toy([[0.0], [1.0]], [0, 1], 3, [0, 2])
    with pytest.raises(DataError):
        compute_prototypes(ds)
    t = compute_prototypes(_toy([[0.0], [1.0]], [0, 1], 2, [0]))
    with pytest.raises(DataError, match="class 1"):
        t.lookup([1])


# -- synthetic data ---------------------------------------------------------------------

def test_noise_free_samples_equal_class_means():
    ds = make_synthetic_dataset(SyntheticSpec(noise_scale=0.0, samples_per_class=5, seed=3))
    for c in range(ds.n_classes):
        rows = ds.features[ds.labels == c]
        assert np.all(rows == rows[0])
    t = compute_prototypes(ds)
    for c in t.classes:
        np.testing.assert_array_equal(t.lookup([c])[0], ds.features[ds.labels == c][0])


def test_synthetic_is_deterministic():
    a = make_synthetic_dataset(SyntheticSpec(seed=11))
    b = make_synthetic_dataset(SyntheticSpec(seed=11))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.split.tobytes() == b.split.tobytes()
    c = make_synthetic_dataset(SyntheticSpec(seed=12))
    assert a.features.tobytes() != c.features.tobytes()


def test_synthetic_splits_follow_the_zsl_convention():
    spec = SyntheticSpec(seed=4)
    ds = make_synthetic_dataset(spec)
    assert ds.seen_classes.size == 20 and ds.unseen_classes.size == 5
    for c in ds.seen_classes:
        tags = ds.split[ds.labels == c]
        assert (tags == TEST_SEEN).sum() == 20 and (tags == TRAIN).sum() == 80
    assert np.all(ds.split[np.isin(ds.labels, ds.unseen_classes)] == TEST_UNSEEN)


def _nearest_true_mean_accuracy(noise):
    ds = make_synthetic_dataset(SyntheticSpec(noise_scale=noise, seed=0))
    means = make_synthetic_dataset(SyntheticSpec(noise_scale=0.0, seed=0)).features[::100]
    d = ((ds.features[:, None, :] - means[None]) ** 2).sum(-1)
    return float((d.argmin(1) == ds.labels).mean())


def test_nearest_true_mean_classifier_degrades_with_noise():
    accs = [_nearest_true_mean_accuracy(n) for n in (0.0, 1.0, 3.0, 6.0)]
    assert accs[0] == 1.0
    assert all(a >= b for a, b in zip(accs, accs[1:]))
    assert accs[-1] < 0.9


def test_synthetic_preconditions():
    with pytest.raises(ValueError):
        make_synthetic_dataset(SyntheticSpec(samples_per_class=0))
    with pytest.raises(ValueError):
        make_synthetic_dataset(SyntheticSpec(noise_scale=-1.0))


# -- batching -------------------------------------------------------------------------------

def test_batch_sizes_4_4_2():
    ds = _toy(np.zeros((10, 2)), np.zeros(10, int), 2, [0])
    assert [b.index.size for b in batch_iterator(ds, 4, seed=0)] == [4, 4, 2]


@given(st.integers(1, 17), st.integers(0, 2 ** 31))
def test_one_epoch_partitions_the_split(tiny_ds, bs, seed):
    idx = np.concatenate([b.index for b in batch_iterator(tiny_ds, bs, seed)])
    assert sorted(idx.tolist()) == tiny_ds.indices(TRAIN).tolist()


def test_same_seed_same_batches(tiny_ds):
    a = BatchIterator(tiny_ds, 7, seed=3)
    b = BatchIterator(tiny_ds, 7, seed=3)
    for _ in range(2):
        ea = [x.index.tolist() for x in a]
        eb = [x.index.tolist() for x in b]
        assert ea == eb
    assert [x.index.tolist() for x in BatchIterator(tiny_ds, 7, seed=3)] != ea  # epochs reshuffle


def test_batches_carry_prototypes(tiny_ds):
    t = compute_prototypes(tiny_ds)
    for b in batch_iterator(tiny_ds, 9, 0, t):
        np.testing.assert_array_equal(b.proto, t.lookup(b.y))
        np.testing.assert_array_equal(b.a, tiny_ds.embeddings[b.y])
