"""Dataset construction, IDX parsing, non-IID partitioners, and noise
injection. Partitioner distributional behavior is checked against
independent statistics (label entropy, exact count conservation)."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefed.data import (
    _largest_remainder,
)
from spikefed.data import (
    ClientPartition,
    Dataset,
    add_gaussian_noise,
    dataset_to_csv,
    load_idx,
    partition_class_imbalanced,
    partition_dirichlet,
    partition_dirichlet_full,
    partition_shards,
    synth_blobs,
)


# ---------------------------------------------------------------------------
# Dataset / ClientPartition containers
# ---------------------------------------------------------------------------

def test_dataset_subset_keeps_metadata():
    ds = synth_blobs(3, 10, dim=4, separation=2.0, seed=0)
    sub = ds.subset(np.arange(5))
    assert len(sub) == 5 and sub.n_classes == 3 and sub.name == ds.name


def test_partition_rejects_overlap_and_empty():
    with pytest.raises(ValueError):
        ClientPartition([np.array([0, 1]), np.array([1, 2])], 2)
    with pytest.raises(ValueError):
        ClientPartition([np.array([0, 1]), np.array([], dtype=int)], 2)


def test_class_histograms_sum_to_sizes():
    ds = synth_blobs(3, 20, dim=4, separation=2.0, seed=1)
    part = partition_dirichlet(ds, n_clients=4, alpha=1.0, seed=2)
    hist = part.class_histograms(ds)
    assert hist.shape == (4, 3)
    assert np.array_equal(hist.sum(axis=1), part.sizes())
    assert np.array_equal(hist.sum(axis=0), np.bincount(ds.labels, minlength=3))


# ---------------------------------------------------------------------------
# IDX binary format
# ---------------------------------------------------------------------------

def _write_idx_pair(tmp_path, images, labels):
    n, rows, cols = images.shape
    img_path = tmp_path / "imgs.idx"
    lbl_path = tmp_path / "lbls.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, rows, cols)
                         + images.astype(np.uint8).tobytes())
    lbl_path.write_bytes(struct.pack(">II", 0x801, n)
                         + labels.astype(np.uint8).tobytes())
    return str(img_path), str(lbl_path)


def test_load_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    ds = load_idx(*_write_idx_pair(tmp_path, images, labels))
    assert len(ds) == 5
    assert ds.samples.shape == (5, 1, 4, 4)  # channel axis for conv input
    assert np.allclose(ds.samples[:, 0], images / 255.0)
    assert np.array_equal(ds.labels, labels)


def test_load_idx_rejects_bad_magic(tmp_path):
    img, lbl = _write_idx_pair(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8),
                               np.array([0, 1], dtype=np.uint8))
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_idx(str(bad), lbl)


def test_load_idx_rejects_count_mismatch(tmp_path):
    img, lbl = _write_idx_pair(tmp_path, np.zeros((3, 2, 2), dtype=np.uint8),
                               np.array([0, 1], dtype=np.uint8))
    with pytest.raises(ValueError):
        load_idx(img, lbl)


def test_load_idx_rejects_truncated_payload(tmp_path):
    img, lbl = _write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8),
                               np.array([0, 1], dtype=np.uint8))
    data = open(img, "rb").read()
    open(img, "wb").write(data[:-3])
    with pytest.raises(ValueError):
        load_idx(img, lbl)


# ---------------------------------------------------------------------------
# Synthetic blobs
# ---------------------------------------------------------------------------

def test_synth_blobs_counts_and_labels():
    ds = synth_blobs(4, 25, dim=6, separation=3.0, seed=0)
    assert len(ds) == 100
    assert np.array_equal(np.bincount(ds.labels), [25, 25, 25, 25])


def test_synth_blobs_center_separation():
    sep = 5.0
    ds = synth_blobs(3, 4000, dim=5, separation=sep, seed=0)
    centers = np.stack([ds.samples[ds.labels == c].mean(axis=0) for c in range(3)])
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.linalg.norm(centers[i] - centers[j]) == pytest.approx(
                sep, rel=0.05)


def test_synth_blobs_norm_skew_preserves_separation():
    sep = 4.0
    a = synth_blobs(3, 4000, dim=5, separation=sep, seed=0, norm_skew=1.5)
    centers = np.stack([a.samples[a.labels == c].mean(axis=0) for c in range(3)])
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.linalg.norm(centers[i] - centers[j]) == pytest.approx(
                sep, rel=0.05)
    norms = np.linalg.norm(centers, axis=1)
    assert norms[0] < norms[1] < norms[2]


def test_synth_blobs_class_scales():
    ds = synth_blobs(2, 5000, dim=4, separation=3.0, seed=0,
                     class_scales=[1.0, 2.0])
    std0 = ds.samples[ds.labels == 0].std(axis=0).mean()
    std1 = ds.samples[ds.labels == 1].std(axis=0).mean()
    assert std1 / std0 == pytest.approx(2.0, rel=0.05)


def test_synth_blobs_validation():
    with pytest.raises(ValueError):
        synth_blobs(3, 10, dim=2, separation=1.0, seed=0)  # dim < classes
    with pytest.raises(ValueError):
        synth_blobs(1, 10, dim=4, separation=1.0, seed=0)


# ---------------------------------------------------------------------------
# Partitioners: conservation, disjointness, shape constraints
# ---------------------------------------------------------------------------

def _assert_conserves(part, n_samples):
    all_idx = np.concatenate([np.asarray(a) for a in part.assignments])
    assert len(all_idx) == len(set(all_idx.tolist()))  # disjoint
    assert set(all_idx.tolist()) <= set(range(n_samples))


def test_partition_dirichlet_covers_everything():
    ds = synth_blobs(4, 50, dim=5, separation=2.0, seed=3)
    part = partition_dirichlet(ds, n_clients=8, alpha=0.5, seed=4)
    all_idx = np.sort(np.concatenate(part.assignments))
    assert np.array_equal(all_idx, np.arange(len(ds)))  # exact conservation
    assert all(len(a) >= 1 for a in part.assignments)


def test_partition_dirichlet_alpha_controls_entropy():
    # small alpha concentrates labels per client: mean per-client label
    # entropy must be lower than under a near-uniform draw
    ds = synth_blobs(5, 200, dim=6, separation=2.0, seed=5)

    def mean_entropy(alpha):
        es = []
        for seed in range(10):
            part = partition_dirichlet(ds, n_clients=10, alpha=alpha, seed=seed)
            for hist in part.class_histograms(ds):
                p = hist / hist.sum()
                p = p[p > 0]
                es.append(float(-(p * np.log(p)).sum()))
        return np.mean(es)

    assert mean_entropy(0.1) < mean_entropy(10.0) - 0.3


def test_partition_dirichlet_full_covers_all_labels():
    ds = synth_blobs(4, 100, dim=5, separation=2.0, seed=6)
    part = partition_dirichlet_full(ds, n_clients=6, alpha=0.3, seed=7)
    all_idx = np.sort(np.concatenate(part.assignments))
    assert np.array_equal(all_idx, np.arange(len(ds)))
    hist = part.class_histograms(ds)
    assert np.all(hist >= 1)  # every client holds every label


def test_partition_shards_two_labels_max():
    ds = synth_blobs(5, 100, dim=6, separation=2.0, seed=8)
    part = partition_shards(ds, n_clients=10, seed=9)
    all_idx = np.sort(np.concatenate(part.assignments))
    assert np.array_equal(all_idx, np.arange(len(ds)))
    hist = part.class_histograms(ds)
    assert np.all((hist > 0).sum(axis=1) <= 2)


def test_partition_class_imbalanced_ratio():
    ds = synth_blobs(4, 300, dim=5, separation=2.0, seed=10)
    part = partition_class_imbalanced(ds, n_clients=5, n1=200, n2=100,
                                      alpha=1.0, seed=11)
    _assert_conserves(part, len(ds))
    hist = part.class_histograms(ds)
    totals = hist.sum(axis=0)
    assert np.array_equal(totals, [200, 200, 100, 100])


def test_partition_class_imbalanced_validation():
    ds = synth_blobs(3, 50, dim=4, separation=2.0, seed=0)
    with pytest.raises(ValueError):
        partition_class_imbalanced(ds, 3, n1=10, n2=5, alpha=1.0, seed=0)  # odd C
    ds4 = synth_blobs(4, 50, dim=5, separation=2.0, seed=0)
    with pytest.raises(ValueError):
        partition_class_imbalanced(ds4, 3, n1=5, n2=10, alpha=1.0, seed=0)


def test_partitioners_seed_determinism():
    ds = synth_blobs(4, 100, dim=5, separation=2.0, seed=12)
    for fn in (lambda: partition_dirichlet(ds, 5, 0.5, seed=1),
               lambda: partition_dirichlet_full(ds, 5, 0.5, seed=1),
               lambda: partition_shards(ds, 8, seed=1),
               lambda: partition_class_imbalanced(ds, 5, 80, 40, 1.0, seed=1)):
        a, b = fn(), fn()
        assert all(np.array_equal(x, y)
                   for x, y in zip(a.assignments, b.assignments))


@settings(max_examples=200, deadline=None)
@given(total=st.integers(0, 500),
       props=st.lists(st.floats(0.001, 1.0), min_size=1, max_size=12))
def test_largest_remainder_allocation_properties(total, props):
    p = np.asarray(props)
    p = p / p.sum()
    counts = _largest_remainder(total, p)
    assert counts.sum() == total                       # exact conservation
    assert np.all(counts >= 0)
    assert np.all(np.abs(counts - total * p) < 1.0)    # within 1 of exact share


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

def test_noise_rate_zero_is_identity():
    ds = synth_blobs(3, 20, dim=4, separation=2.0, seed=0)
    noisy = add_gaussian_noise(ds, 0.0, seed=1)
    assert np.array_equal(noisy.samples, ds.samples)
    assert noisy.samples is not ds.samples  # fresh copy


def test_noise_norm_ratio_exact():
    ds = synth_blobs(3, 20, dim=6, separation=2.0, seed=0)
    for rate in (0.1, 0.5, 1.0):
        noisy = add_gaussian_noise(ds, rate, seed=2)
        delta = (noisy.samples - ds.samples).reshape(len(ds), -1)
        ratio = np.linalg.norm(delta, axis=1) / np.linalg.norm(
            ds.samples.reshape(len(ds), -1), axis=1)
        assert np.allclose(ratio, rate)
    with pytest.raises(ValueError):
        add_gaussian_noise(ds, -0.1, seed=0)


def test_dataset_to_csv(tmp_path):
    ds = synth_blobs(2, 3, dim=2, separation=1.0, seed=0)
    path = tmp_path / "out.csv"
    dataset_to_csv(ds, str(path))
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 6
    first = lines[0].split(",")
    assert int(first[0]) == ds.labels[0]
    assert len(first) == 3  # label + 2 values
