"""Datasets: synthetic Gaussian clusters, CSV / IDX ingestion, splits and few-shot episodes."""

import csv
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ConfigError,
    CountMismatch,
    EmptyDataset,
    FormatError,
    InsufficientClasses,
    InsufficientSamples,
    ShapeError,
)

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DEFAULT_QUERY_SHOT = 15


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled feature vectors with dense 0-based class ids.

    ``class_ids[c]`` is the identifier class ``c`` carried in its source
    (file label, or the parent dataset's id after a class split).
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    class_ids: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"features {x.shape} and labels {y.shape} do not line up")
        if x.shape[0] == 0:
            raise EmptyDataset("dataset has no samples")
        if x.shape[1] == 0:
            raise ShapeError("feature_dim must be positive")
        if y.min() < 0 or y.max() >= self.class_count:
            raise ShapeError(f"labels must lie in [0, {self.class_count})")
        if np.unique(y).size != self.class_count:
            raise ShapeError("every declared class needs at least one sample")
        ids = np.arange(self.class_count) if self.class_ids is None else self.class_ids
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape != (self.class_count,):
            raise ShapeError("class_ids must have one entry per class")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "class_ids", _frozen(ids))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @cached_property
    def class_indices(self):
        """Sample indices for each class, in dataset order."""
        return [np.flatnonzero(self.labels == c) for c in range(self.class_count)]

    def subset(self, idx):
        """Samples at ``idx``; labels are kept as they are."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count, self.class_ids)

    def fingerprint(self):
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class SyntheticSpec:
    class_count: int = 20
    feature_dim: int = 64
    samples_per_class: int = 100
    mean_radius: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("class_count", "feature_dim", "samples_per_class"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"must be an integer >= 1, got {value!r}", field=name)
        if not self.mean_radius > 0:
            raise ConfigError(f"must be > 0, got {self.mean_radius!r}", field="mean_radius")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"must be >= 0, got {self.noise_sigma!r}", field="noise_sigma")


@dataclass(frozen=True, eq=False)
class Episode:
    way: int
    shot: int
    query_shot: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    classes: np.ndarray = field(default=None)
    support_idx: np.ndarray = field(default=None)
    query_idx: np.ndarray = field(default=None)


def generate_synthetic(spec):
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.class_count, spec.feature_dim))
    means *= spec.mean_radius / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    noise = rng.standard_normal((labels.size, spec.feature_dim))
    features = means[labels] + spec.noise_sigma * noise
    return Dataset(features, labels, spec.class_count)


def _dense_labels(raw, source):
    uniq = np.unique(raw)
    if uniq.size and (uniq[0] != 0 or uniq[-1] != uniq.size - 1):
        log.info("%s: remapping sparse labels %s to 0..%d", source, uniq.tolist(), uniq.size - 1)
    return np.searchsorted(uniq, raw), uniq


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path):
    """Read ``label,f1,...,fd`` rows. A non-numeric first field on line 1 marks a header."""
    labels, rows = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if len(row) < 2:
                raise FormatError("row needs a label and at least one feature", line=lineno)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"expected {width - 1} features, got {len(row) - 1}", line=lineno)
            try:
                label = float(row[0])
                feats = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise FormatError(f"non-numeric value ({exc})", line=lineno) from None
            if label != int(label) or label < 0:
                raise FormatError(f"label must be a non-negative integer, got {row[0]!r}", line=lineno)
            labels.append(int(label))
            rows.append(feats)
    if not rows:
        raise EmptyDataset(f"{path}: no samples")
    dense, uniq = _dense_labels(np.array(labels, dtype=np.int64), path)
    return Dataset(np.array(rows, dtype=np.float64), dense, uniq.size, uniq)


def save_csv(ds, path, header=False):
    """Write ``ds`` in the ``label,f1,...,fd`` format. Floats use ``repr`` so they round-trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["label"] + [f"f{j + 1}" for j in range(ds.feature_dim)])
        for label, row in zip(ds.labels, ds.features):
            writer.writerow([int(ds.class_ids[label])] + [repr(float(v)) for v in row])


def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Load an IDX ubyte image/label pair; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise EmptyDataset(f"{images_path}: no images")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    dense, uniq = _dense_labels(labels.astype(np.int64), labels_path)
    return Dataset(features, dense, uniq.size, uniq)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC))
        fh.write(struct.pack(">I", labels.shape[0]))
        fh.write(labels.tobytes())


def _part_sizes(n, fractions):
    raw = np.array(fractions) * n
    sizes = np.floor(raw + 1e-9).astype(int)
    remainder = n - sizes.sum()
    for j in np.argsort(-(raw - sizes), kind="stable")[:remainder]:
        sizes[j] += 1
    while np.any(sizes == 0):
        sizes[np.argmax(sizes)] -= 1
        sizes[np.argmin(sizes)] += 1
    return sizes


def split(ds, fractions=(0.8, 0.1, 0.1), seed=0):
    """Stratified per-class shuffle into len(fractions) disjoint parts."""
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {fractions}", field="fractions")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fractions]
    for c, idx in enumerate(ds.class_indices):
        if idx.size < len(fractions):
            raise InsufficientSamples(
                f"class {c} has {idx.size} samples, need >= {len(fractions)} for {len(fractions)} parts"
            )
        shuffled = rng.permutation(idx)
        start = 0
        for part, size in zip(parts, _part_sizes(idx.size, fractions)):
            part.append(shuffled[start:start + size])
            start += size
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


def split_classes(ds, base_fraction=0.5, seed=0):
    """Class-disjoint (base, novel) split; each side gets contiguous labels."""
    if ds.class_count < 2:
        raise InsufficientClasses(f"need >= 2 classes, have {ds.class_count}")
    if not 0 < base_fraction < 1:
        raise ConfigError(f"must be in (0, 1), got {base_fraction}", field="base_fraction")
    rng = np.random.default_rng(seed)
    n_base = int(round(ds.class_count * base_fraction))
    if n_base == 0 or n_base == ds.class_count:
        raise InsufficientClasses(
            f"base_fraction {base_fraction} leaves one side empty with {ds.class_count} classes"
        )
    order = rng.permutation(ds.class_count)
    return (_take_classes(ds, np.sort(order[:n_base])), _take_classes(ds, np.sort(order[n_base:])))


def _take_classes(ds, classes):
    remap = np.full(ds.class_count, -1, dtype=np.int64)
    remap[classes] = np.arange(classes.size)
    keep = np.flatnonzero(remap[ds.labels] >= 0)
    return Dataset(ds.features[keep], remap[ds.labels[keep]], classes.size, ds.class_ids[classes])


def sample_episode(ds, way, shot, query_shot=DEFAULT_QUERY_SHOT, seed=0):
    """Draw an N-way K-shot task; episode labels are 0..way-1 in draw order."""
    if not 1 <= way <= ds.class_count:
        raise InsufficientClasses(f"way={way} but dataset has {ds.class_count} classes")
    if shot < 1 or query_shot < 0:
        raise ConfigError("shot must be >= 1 and query_shot >= 0", field="shot")
    rng = np.random.default_rng(seed)
    classes = rng.choice(ds.class_count, size=way, replace=False)
    support, query = [], []
    for c in classes:
        idx = ds.class_indices[c]
        if idx.size < shot + query_shot:
            raise InsufficientSamples(
                f"class {c} has {idx.size} samples, episode needs {shot + query_shot}"
            )
        drawn = rng.permutation(idx)[: shot + query_shot]
        support.append(drawn[:shot])
        query.append(drawn[shot:])
    support_idx = np.concatenate(support)
    query_idx = np.concatenate(query)
    return Episode(
        way=way,
        shot=shot,
        query_shot=query_shot,
        support_x=ds.features[support_idx],
        support_y=np.repeat(np.arange(way), shot),
        query_x=ds.features[query_idx],
        query_y=np.repeat(np.arange(way), query_shot),
        classes=classes,
        support_idx=support_idx,
        query_idx=query_idx,
    )
