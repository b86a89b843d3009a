import gzip
import struct

import numpy as np
import pytest

from entkcone.data import (
    Dataset,
    blob_centers,
    encode_idx,
    load_idx,
    load_mnist5k,
    parse_idx,
    probe_sample,
    synth_blobs,
    synth_blobs_split,
    write_idx,
)
from entkcone.errors import FormatError, LengthError, UsageError
from entkcone.nn import ArchSpec, init_model
from entkcone.train import TrainConfig, evaluate, train


@pytest.fixture
def idx_pair(tmp_path):
    """Two 28x28 images written byte by byte from the published IDX layout."""
    img = np.zeros((2, 28, 28), dtype=np.uint8)
    img[1, 3, 4] = 255
    img[1, 27, 27] = 51
    images = bytes([0, 0, 8, 3]) + struct.pack(">III", 2, 28, 28) + img.tobytes()
    labels = bytes([0, 0, 8, 1]) + struct.pack(">I", 2) + bytes([7, 2])
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(images)
    lp.write_bytes(labels)
    return ip, lp


def test_load_idx_fixture(idx_pair):
    ds = load_idx(*idx_pair)
    assert ds.inputs.shape == (2, 784)
    assert list(ds.labels) == [7, 2]
    assert np.all(ds.inputs[0] == 0.0)
    assert ds.inputs[1, 3 * 28 + 4] == 1.0
    assert ds.inputs[1, 783] == pytest.approx(0.2)
    assert ds.inputs[1].sum() == pytest.approx(1.2)


def test_label_file_with_image_magic(tmp_path, idx_pair):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(bytes([0, 0, 8, 3]) + struct.pack(">I", 2) + bytes([1, 2]))
    with pytest.raises(FormatError, match="0x00000803"):
        load_idx(idx_pair[0], bad)


def test_truncated_payload(tmp_path, idx_pair):
    raw = idx_pair[0].read_bytes()[:-1]
    short = tmp_path / "short.idx"
    short.write_bytes(raw)
    with pytest.raises(LengthError):
        load_idx(short, idx_pair[1])


def test_truncated_header():
    with pytest.raises(LengthError):
        parse_idx(bytes([0, 0, 8, 3, 0, 0]), 0x803)


def test_count_mismatch(tmp_path, idx_pair):
    lab = tmp_path / "one.idx"
    lab.write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 1) + bytes([3]))
    with pytest.raises(LengthError):
        load_idx(idx_pair[0], lab)


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_roundtrip(tmp_path, suffix, rng):
    img = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    lab = rng.integers(0, 10, size=5, dtype=np.uint8)
    ip, lp = tmp_path / f"i{suffix}", tmp_path / f"l{suffix}"
    write_idx(ip, img)
    write_idx(lp, lab)
    ds = load_idx(ip, lp)
    np.testing.assert_array_equal(np.rint(ds.inputs * 255).astype(np.uint8).reshape(img.shape), img)
    np.testing.assert_array_equal(ds.labels, lab)
    if suffix:
        assert ip.read_bytes()[:2] == b"\x1f\x8b"
        assert gzip.decompress(ip.read_bytes()) == encode_idx(img)


def test_bundled_mnist5k():
    tr, te = load_mnist5k("train"), load_mnist5k("test")
    assert tr.inputs.shape == (4000, 784) and te.inputs.shape == (1000, 784)
    assert np.all(np.bincount(tr.labels) == 400) and np.all(np.bincount(te.labels) == 100)
    assert 0.0 <= tr.inputs.min() and tr.inputs.max() == 1.0
    with pytest.raises(UsageError):
        load_mnist5k("val")


def test_dataset_invariants():
    with pytest.raises(UsageError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(UsageError):
        Dataset(np.zeros((2, 2)), [0, 3], n_classes=3)


def test_blobs_zero_spread_hits_centers():
    ds = synth_blobs(5, 4, 3, 3, 0.0)
    np.testing.assert_array_equal(ds.inputs, blob_centers(3, 3)[ds.labels])


def test_blob_centers_distance():
    for d0, c in ((2, 2), (2, 5), (5, 3), (1, 3)):
        centers = blob_centers(d0, c, 10.0)
        gaps = np.linalg.norm(centers[1:] - centers[:-1], axis=1)
        assert gaps == pytest.approx(np.full(c - 1, 10.0))


def test_blobs_deterministic():
    a, b = synth_blobs(3, 20, 4, 3, 1.0), synth_blobs(3, 20, 4, 3, 1.0)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert np.any(synth_blobs(4, 20, 4, 3, 1.0).inputs != a.inputs)


def test_blobs_split_is_disjoint_draw():
    tr, te = synth_blobs_split(0, 10, 3, 2, 1.0)
    assert not np.any(np.all(tr.inputs[:, None, :] == te.inputs[None, :, :], axis=-1))


def test_separable_blobs_train_to_full_accuracy():
    tr, te = synth_blobs_split(0, 50, 2, 2, 0.1)
    model = init_model(ArchSpec("linear", (2,), "relu", 2, 2), 0)
    log = train(model, tr, TrainConfig(lr=0.1, momentum=0.0, batch_size=10, iterations=200))
    assert evaluate(log.final.model, tr)[1] == 1.0
    assert evaluate(log.final.model, te)[1] == 1.0


def test_probe_full_selection(blobs):
    p = probe_sample(blobs, len(blobs), 0)
    np.testing.assert_array_equal(p.indices, np.arange(len(blobs)))


def test_probe_stratified_counts(blobs):
    p = probe_sample(blobs, 9, 0, stratified=True)
    assert list(np.bincount(p.labels)) == [3, 3, 3]
    assert len(set(p.indices)) == 9
    np.testing.assert_array_equal(p.inputs, blobs.inputs[p.indices])


def test_probe_deterministic(blobs):
    a, b = probe_sample(blobs, 7, 42), probe_sample(blobs, 7, 42)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert a.key == b.key


def test_probe_errors(blobs):
    with pytest.raises(UsageError):
        probe_sample(blobs, len(blobs) + 1, 0)
    with pytest.raises(UsageError):
        probe_sample(blobs, 1, 0)
