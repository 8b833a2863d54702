"""Datasets and client partitioning.

Provides the IDX binary loader, a synthetic Gaussian-blob generator for
desk-scale runs, the four non-IID partitioners (Dirichlet, size-only
Dirichlet, label shards, class-imbalanced subsampling), and test-time
Gaussian noise injection. Everything is a pure function of its inputs
plus a seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "ClientPartition",
    "load_idx",
    "synth_blobs",
    "partition_dirichlet",
    "partition_dirichlet_full",
    "partition_shards",
    "partition_class_imbalanced",
    "add_gaussian_noise",
    "dataset_to_csv",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MAX_REDRAWS = 100  # Dirichlet re-draw budget before giving up


@dataclass
class Dataset:
    """Samples plus integer labels in [0, n_classes)."""

    samples: np.ndarray   # (n, *sample_shape), float
    labels: np.ndarray    # (n,), int
    n_classes: int
    name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.samples.shape[1:]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.samples[indices], self.labels[indices],
                       self.n_classes, self.name)


@dataclass
class ClientPartition:
    """Index-based assignment of dataset samples to clients.

    ``pool`` is the set of indices the partition covers; it equals the
    whole dataset except for the class-imbalanced partitioner, which
    subsamples first.
    """

    assignments: list[np.ndarray]
    n_clients: int
    pool: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.assignments) != self.n_clients:
            raise ValueError("assignment count != client count")
        self.assignments = [np.asarray(a, dtype=int) for a in self.assignments]
        if self.pool is None:
            self.pool = np.concatenate(self.assignments) if self.assignments else np.array([], dtype=int)
        self.pool = np.sort(np.asarray(self.pool, dtype=int))
        combined = np.concatenate(self.assignments)
        if len(np.unique(combined)) != len(combined):
            raise ValueError("client index lists overlap")
        if not np.array_equal(np.sort(combined), self.pool):
            raise ValueError("assignments do not cover the pool exactly")
        if any(len(a) == 0 for a in self.assignments):
            raise ValueError("empty client")

    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignments])

    def class_histograms(self, dataset: Dataset) -> np.ndarray:
        """(n_clients, n_classes) matrix of per-client label counts."""
        hist = np.zeros((self.n_clients, dataset.n_classes), dtype=int)
        for k, idx in enumerate(self.assignments):
            hist[k] = np.bincount(dataset.labels[idx], minlength=dataset.n_classes)
        return hist


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_be32(f) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise ValueError("truncated IDX header")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path: str, labels_path: str, name: str = "idx") -> Dataset:
    """Load an IDX image/label file pair (the MNIST on-disk format).

    Pixel bytes are scaled to [0, 1]; sample shape is (1, rows, cols).
    """
    with open(images_path, "rb") as f:
        magic = _read_be32(f)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {images_path}")
        count = _read_be32(f)
        rows = _read_be32(f)
        cols = _read_be32(f)
        raw = f.read()
        if len(raw) != count * rows * cols:
            raise ValueError(
                f"image file truncated: expected {count * rows * cols} pixel "
                f"bytes, got {len(raw)}"
            )
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {labels_path}")
        n_labels = _read_be32(f)
        raw = f.read()
        if len(raw) != n_labels:
            raise ValueError(
                f"label file truncated: expected {n_labels} bytes, got {len(raw)}"
            )
        labels = np.frombuffer(raw, dtype=np.uint8).astype(int)
    if count != n_labels:
        raise ValueError(f"{count} images but {n_labels} labels")
    n_classes = int(labels.max()) + 1 if n_labels else 0
    return Dataset(images.astype(float) / 255.0, labels, n_classes, name)


def synth_blobs(n_classes: int, n_per_class: int, dim: int, separation: float,
                seed: int, class_scales: list[float] | None = None,
                norm_skew: float = 0.0) -> Dataset:
    """Isotropic Gaussian clusters, centers pairwise ``separation`` apart.

    ``class_scales`` optionally sets the per-class cluster std (default
    1.0 for all); requires dim >= n_classes so centers can sit on scaled
    basis vectors. ``norm_skew`` translates the whole center set by the
    fixed vector (0, skew, 2*skew, ...), which leaves all pairwise
    distances untouched but gives higher-id classes larger input norms
    (a stand-in for class asymmetries real image data has).
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    if dim < n_classes:
        raise ValueError("dim must be >= n_classes for equidistant centers")
    if class_scales is None:
        class_scales = [1.0] * n_classes
    if len(class_scales) != n_classes:
        raise ValueError("one scale per class required")
    rng = np.random.default_rng(seed)
    # basis-vector corners are pairwise sqrt(2) apart before scaling
    centers = np.zeros((n_classes, dim))
    for c in range(n_classes):
        centers[c, c] = separation / np.sqrt(2.0)
    if norm_skew != 0.0:
        # shared translation: identical for every center, so distances hold
        shift = np.zeros(dim)
        shift[:n_classes] = norm_skew * np.arange(n_classes)
        centers += shift
    samples = np.empty((n_classes * n_per_class, dim))
    labels = np.empty(n_classes * n_per_class, dtype=int)
    for c in range(n_classes):
        lo = c * n_per_class
        samples[lo:lo + n_per_class] = centers[c] + class_scales[c] * rng.normal(
            size=(n_per_class, dim))
        labels[lo:lo + n_per_class] = c
    return Dataset(samples, labels, n_classes, "synth_blobs")


def dataset_to_csv(dataset: Dataset, path: str) -> None:
    """One row per sample: label, then the flattened sample values."""
    flat = dataset.samples.reshape(len(dataset), -1)
    with open(path, "w") as f:
        for label, row in zip(dataset.labels, flat):
            f.write(str(int(label)) + "," + ",".join(repr(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Partitioners
# ---------------------------------------------------------------------------

def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing exactly to ``total``, floor + largest
    fractional remainders (ties to the lowest index)."""
    proportions = np.asarray(proportions, dtype=float)
    proportions = proportions / proportions.sum()
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short:
        frac = raw - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    return counts


def _split_by_counts(indices: np.ndarray, counts: np.ndarray) -> list[np.ndarray]:
    bounds = np.cumsum(counts)[:-1]
    return np.split(indices, bounds)


def partition_dirichlet(dataset: Dataset, n_clients: int, alpha: float,
                        seed: int) -> ClientPartition:
    """Per-class Dirichlet split: both client sizes and class mixes end
    up unbalanced. Empty clients trigger a re-draw (up to 100)."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_REDRAWS):
        per_client = [[] for _ in range(n_clients)]
        for c in range(dataset.n_classes):
            cls_idx = np.flatnonzero(dataset.labels == c)
            cls_idx = rng.permutation(cls_idx)
            props = rng.dirichlet([alpha] * n_clients)
            counts = _largest_remainder(len(cls_idx), props)
            for k, chunk in enumerate(_split_by_counts(cls_idx, counts)):
                per_client[k].append(chunk)
        lists = [np.concatenate(chunks) for chunks in per_client]
        if all(len(a) for a in lists):
            return ClientPartition(lists, n_clients)
    raise ValueError(
        f"could not draw a Dirichlet({alpha}) partition without empty "
        f"clients in {MAX_REDRAWS} attempts"
    )


def partition_dirichlet_full(dataset: Dataset, n_clients: int, alpha: float,
                             seed: int) -> ClientPartition:
    """Client sizes follow one Dirichlet draw; every client's class mix
    mirrors the global distribution, so all clients hold all classes."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = len(dataset)
    n_classes = dataset.n_classes
    rng = np.random.default_rng(seed)
    class_indices = [np.flatnonzero(dataset.labels == c) for c in range(n_classes)]
    if any(len(ci) < n_clients for ci in class_indices):
        raise ValueError("a class has fewer samples than clients; full "
                         "coverage impossible")
    for _ in range(MAX_REDRAWS):
        sizes = _largest_remainder(n, rng.dirichlet([alpha] * n_clients))
        if sizes.min() < n_classes:
            continue
        # allocation matrix: per class, distribute proportionally to sizes
        alloc = np.zeros((n_clients, n_classes), dtype=int)
        for c, cls_idx in enumerate(class_indices):
            alloc[:, c] = _largest_remainder(len(cls_idx), sizes / n)
        # guarantee full label coverage: borrow from the largest holder
        feasible = True
        for c in range(n_classes):
            for k in np.flatnonzero(alloc[:, c] == 0):
                donor = int(np.argmax(alloc[:, c]))
                if alloc[donor, c] < 2:
                    feasible = False
                    break
                alloc[donor, c] -= 1
                alloc[k, c] += 1
            if not feasible:
                break
        if not feasible:
            continue
        lists = [[] for _ in range(n_clients)]
        for c, cls_idx in enumerate(class_indices):
            shuffled = rng.permutation(cls_idx)
            for k, chunk in enumerate(_split_by_counts(shuffled, alloc[:, c])):
                lists[k].append(chunk)
        return ClientPartition([np.concatenate(l) for l in lists], n_clients)
    raise ValueError(
        f"could not draw a size Dirichlet({alpha}) giving every client at "
        f"least {n_classes} samples in {MAX_REDRAWS} attempts"
    )


def partition_shards(dataset: Dataset, n_clients: int, shards_per_client: int = 2,
                     seed: int = 0) -> ClientPartition:
    """Label-sorted data cut into label-pure shards; each client receives
    ``shards_per_client`` shards carrying distinct labels."""
    if shards_per_client != 2:
        raise ValueError("only 2 shards per client are supported")
    n_classes = dataset.n_classes
    if n_classes < 2:
        raise ValueError("need at least 2 distinct labels for 2-shard clients")
    rng = np.random.default_rng(seed)
    total_shards = shards_per_client * n_clients
    class_indices = [np.flatnonzero(dataset.labels == c) for c in range(n_classes)]
    class_counts = np.array([len(ci) for ci in class_indices])
    if np.any(class_counts == 0):
        raise ValueError("every class needs at least one sample")
    shards_per_label = _largest_remainder(total_shards, class_counts / class_counts.sum())
    # a label may not fill more than half the shards, or some client
    # would be forced to take two shards of the same label
    if shards_per_label.max() > n_clients or shards_per_label.min() < 1:
        raise ValueError("label distribution too skewed for 2 distinct "
                         "labels per client")
    shards: list[tuple[int, np.ndarray]] = []
    for c, cls_idx in enumerate(class_indices):
        shuffled = rng.permutation(cls_idx)
        counts = _largest_remainder(len(shuffled),
                                    np.ones(shards_per_label[c]))
        for chunk in _split_by_counts(shuffled, counts):
            shards.append((c, chunk))
    # pair shards from the two most loaded labels until exhausted
    remaining = [[c for c, _ in shards].count(c) for c in range(n_classes)]
    by_label = [[s for c, s in shards if c == lab] for lab in range(n_classes)]
    lists = []
    for _ in range(n_clients):
        order = np.lexsort((np.arange(n_classes), -np.array(remaining)))
        a, b = order[0], order[1]
        if remaining[b] == 0:
            raise ValueError("ran out of distinct labels while pairing shards")
        lists.append(np.concatenate([by_label[a].pop(), by_label[b].pop()]))
        remaining[a] -= 1
        remaining[b] -= 1
    return ClientPartition(lists, n_clients)


def partition_class_imbalanced(dataset: Dataset, n_clients: int, n1: int, n2: int,
                               alpha: float, seed: int) -> ClientPartition:
    """Class-imbalanced pool: the first half of the classes keep n1
    samples each, the second half n2; client sizes follow Dir(alpha)."""
    if dataset.n_classes % 2:
        raise ValueError("class-imbalanced partition needs an even class count")
    if not (n1 >= n2 >= 1):
        raise ValueError("require n1 >= n2 >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    half = dataset.n_classes // 2
    pool_parts = []
    for c in range(dataset.n_classes):
        want = n1 if c < half else n2
        cls_idx = np.flatnonzero(dataset.labels == c)
        if len(cls_idx) < want:
            raise ValueError(
                f"class {c} has {len(cls_idx)} samples, {want} requested"
            )
        pool_parts.append(rng.choice(cls_idx, size=want, replace=False))
    pool = np.concatenate(pool_parts)
    for _ in range(MAX_REDRAWS):
        sizes = _largest_remainder(len(pool), rng.dirichlet([alpha] * n_clients))
        if sizes.min() >= 1:
            shuffled = rng.permutation(pool)
            lists = _split_by_counts(shuffled, sizes)
            return ClientPartition(list(lists), n_clients, pool=pool)
    raise ValueError(
        f"could not draw a Dir({alpha}) size split without empty clients "
        f"in {MAX_REDRAWS} attempts"
    )


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

def add_gaussian_noise(dataset: Dataset, rate: float, seed: int) -> Dataset:
    """Add per-sample Gaussian noise rescaled so its L2 norm equals
    ``rate`` times the sample's L2 norm. rate=0 leaves data untouched."""
    if rate < 0:
        raise ValueError("noise rate must be nonnegative")
    if rate == 0:
        return Dataset(dataset.samples.copy(), dataset.labels.copy(),
                       dataset.n_classes, dataset.name)
    rng = np.random.default_rng(seed)
    flat = dataset.samples.reshape(len(dataset), -1)
    noise = rng.normal(size=flat.shape)
    sample_norms = np.linalg.norm(flat, axis=1)
    noise_norms = np.linalg.norm(noise, axis=1)
    scale = np.zeros(len(dataset))
    nonzero = (sample_norms > 0) & (noise_norms > 0)
    scale[nonzero] = rate * sample_norms[nonzero] / noise_norms[nonzero]
    noisy = flat + noise * scale[:, None]
    return Dataset(noisy.reshape(dataset.samples.shape), dataset.labels.copy(),
                   dataset.n_classes, dataset.name)
