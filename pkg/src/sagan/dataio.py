"""Datasets, binary matrix files, prototypes and mini-batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

TRAIN, TEST_SEEN, TEST_UNSEEN = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", TEST_SEEN: "test_seen", TEST_UNSEEN: "test_unseen"}

FEATURE_MAGIC = b"ZSF1"
LABEL_MAGIC = b"ZSL1"


class FormatError(ValueError):
    pass


class DataError(ValueError):
    pass


# -- binary files ---------------------------------------------------------------

def save_feature_file(path, matrix) -> None:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"feature matrices are 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *m.shape))
        fh.write(np.ascontiguousarray(m).tobytes())


def load_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0 (expected {FEATURE_MAGIC!r})")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    rows, cols = struct.unpack_from("<II", raw, 4)
    want = 12 + 4 * rows * cols
    if len(raw) != want:
        raise FormatError(
            f"{path}: header claims {rows}x{cols} floats ending at offset {want}, file ends at offset {len(raw)}"
        )
    if rows * cols == 0:
        return np.zeros((rows, cols), dtype=np.float32)
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)


def save_label_file(path, labels) -> None:
    lab = np.asarray(labels).ravel()
    if lab.size and (lab.min() < 0 or lab.max() > 0xFFFFFFFF):
        raise FormatError("labels must fit in u32")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<I", lab.size))
        fh.write(lab.astype("<u4").tobytes())


def load_label_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != LABEL_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0 (expected {LABEL_MAGIC!r})")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    (n,) = struct.unpack_from("<I", raw, 4)
    want = 8 + 4 * n
    if len(raw) != want:
        raise FormatError(f"{path}: header claims {n} labels ending at offset {want}, file ends at offset {len(raw)}")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return np.frombuffer(raw, dtype="<u4", offset=8).astype(np.int64)


def save_split_file(path, seen, unseen, sample_split=None) -> None:
    """Write class sets; optional per-sample split sections hold sample indices."""
    lines = ["seen:", " ".join(str(int(c)) for c in seen), "unseen:", " ".join(str(int(c)) for c in unseen)]
    if sample_split is not None:
        for code, name in SPLIT_NAMES.items():
            lines += [f"{name}:", " ".join(str(i) for i in np.flatnonzero(sample_split == code))]
    Path(path).write_text("\n".join(lines) + "\n")


def load_split_file(path) -> dict[str, np.ndarray]:
    sections: dict[str, list[int]] = {}
    current = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.endswith(":"):
            current = line[:-1]
            if current in sections:
                raise FormatError(f"{path}:{lineno}: duplicate section {current!r}")
            sections[current] = []
            continue
        if current is None:
            raise FormatError(f"{path}:{lineno}: ids before any section header")
        try:
            sections[current].extend(int(tok) for tok in line.split())
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer id in {line!r}") from None
    for need in ("seen", "unseen"):
        if need not in sections:
            raise FormatError(f"{path}: missing section {need!r}")
    return {k: np.asarray(v, dtype=np.int64) for k, v in sections.items()}


# -- dataset -----------------------------------------------------------------------

@dataclass(frozen=True)
class ZslDataset:
    features: np.ndarray  # N x d_v
    labels: np.ndarray  # N
    embeddings: np.ndarray  # C x d_a, row c = class c
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    split: np.ndarray  # N, one of TRAIN / TEST_SEEN / TEST_UNSEEN

    def __post_init__(self):
        self.validate()

    @property
    def n_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d_v(self) -> int:
        return self.features.shape[1]

    @property
    def d_a(self) -> int:
        return self.embeddings.shape[1]

    def indices(self, split: int) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def validate(self) -> None:
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise DataError(f"{n} feature rows but {self.labels.shape[0]} labels / {self.split.shape[0]} split tags")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        seen, unseen = set(self.seen_classes.tolist()), set(self.unseen_classes.tolist())
        if seen & unseen:
            raise DataError(f"classes {sorted(seen & unseen)} are both seen and unseen")
        if not set(np.unique(self.split).tolist()) <= set(SPLIT_NAMES):
            raise DataError("unknown split tag")
        train_labels = set(self.labels[self.split == TRAIN].tolist())
        if not train_labels <= seen:
            raise DataError(f"train split holds non-seen classes {sorted(train_labels - seen)}")
        ts = set(self.labels[self.split == TEST_SEEN].tolist())
        if not ts <= seen:
            raise DataError(f"test-seen split holds non-seen classes {sorted(ts - seen)}")
        tu = set(self.labels[self.split == TEST_UNSEEN].tolist())
        if not tu <= unseen:
            raise DataError(f"test-unseen split holds non-unseen classes {sorted(tu - unseen)}")
        zero = np.flatnonzero(~self.embeddings.any(axis=1))
        if zero.size:
            raise DataError(f"class embedding rows {zero.tolist()} are all zero")

    def save(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "features.zsf", d / "labels.zsl", d / "embeddings.zsf", d / "split.txt"]
        save_feature_file(paths[0], self.features)
        save_label_file(paths[1], self.labels)
        save_feature_file(paths[2], self.embeddings)
        save_split_file(paths[3], self.seen_classes, self.unseen_classes, self.split)
        return paths

    @classmethod
    def load(cls, directory) -> "ZslDataset":
        d = Path(directory)
        for name in ("features.zsf", "labels.zsl", "embeddings.zsf", "split.txt"):
            if not (d / name).exists():
                raise DataError(f"{d / name} does not exist")
        sections = load_split_file(d / "split.txt")
        features = load_feature_file(d / "features.zsf")
        split = np.full(features.shape[0], -1, dtype=np.int8)
        for code, name in SPLIT_NAMES.items():
            if name not in sections:
                raise DataError(f"{d / 'split.txt'}: missing per-sample section {name!r}")
            split[sections[name]] = code
        if (split < 0).any():
            raise DataError(f"{np.count_nonzero(split < 0)} samples have no split assignment")
        return cls(
            features=features,
            labels=load_label_file(d / "labels.zsl"),
            embeddings=load_feature_file(d / "embeddings.zsf"),
            seen_classes=np.sort(sections["seen"]),
            unseen_classes=np.sort(sections["unseen"]),
            split=split,
        )


@dataclass
class PrototypeTable:
    classes: np.ndarray  # seen class ids, sorted
    original: np.ndarray  # len(classes) x d_v
    mapped: np.ndarray | None = None  # len(classes) x d_m, filled after stage 1
    _row: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._row = {int(c): i for i, c in enumerate(self.classes)}

    def rows(self, labels) -> np.ndarray:
        try:
            return np.fromiter((self._row[int(c)] for c in np.asarray(labels).ravel()), dtype=np.int64)
        except KeyError as e:
            raise DataError(f"no prototype for class {e.args[0]}") from None

    def lookup(self, labels, space: str = "original") -> np.ndarray:
        table = self.original if space == "original" else self.mapped
        if table is None:
            raise DataError(f"no {space} prototypes available")
        return table[self.rows(labels)]

    def __contains__(self, c) -> bool:
        return int(c) in self._row


def compute_prototypes(ds: ZslDataset) -> PrototypeTable:
    tr = ds.indices(TRAIN)
    x, y = ds.features[tr].astype(np.float64), ds.labels[tr]
    classes = np.sort(ds.seen_classes)
    counts = np.bincount(y, minlength=ds.n_classes)[classes]
    if (counts == 0).any():
        raise DataError(f"seen class {int(classes[np.argmin(counts)])} has no training samples")
    sums = np.zeros((ds.n_classes, ds.d_v))
    np.add.at(sums, y, x)
    protos = (sums[classes] / counts[:, None]).astype(np.float32)
    return PrototypeTable(classes=classes, original=protos)


@dataclass(frozen=True)
class SyntheticSpec:
    n_seen: int = 20
    n_unseen: int = 5
    d_v: int = 64
    d_a: int = 16
    samples_per_class: int = 100
    noise_scale: float = 0.1
    seed: int = 0
    test_fraction: float = 0.2
    weight_scale: float = 1.0  # std of the Gaussian W entries


def make_synthetic_dataset(spec: SyntheticSpec) -> ZslDataset:
    """Features are an affine image of class attributes plus Gaussian noise."""
    if min(spec.n_seen, spec.n_unseen, spec.d_v, spec.d_a) < 1:
        raise ValueError("class counts and dimensions must be >= 1")
    if spec.samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if spec.noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    if spec.weight_scale < 0:
        raise ValueError("weight_scale must be >= 0")
    rng = np.random.default_rng(spec.seed)
    n_cls = spec.n_seen + spec.n_unseen
    attrs = rng.uniform(0.0, 1.0, size=(n_cls, spec.d_a))
    W = rng.normal(size=(spec.d_v, spec.d_a)) * spec.weight_scale
    b = rng.normal(size=spec.d_v)
    means = attrs @ W.T + b
    unseen = np.sort(rng.choice(n_cls, size=spec.n_unseen, replace=False))
    seen = np.setdiff1d(np.arange(n_cls), unseen)

    k = spec.samples_per_class
    labels = np.repeat(np.arange(n_cls), k)
    noise = rng.normal(size=(n_cls * k, spec.d_v)) * spec.noise_scale
    features = means[labels] + noise
    split = np.full(labels.size, TEST_UNSEEN, dtype=np.int8)
    n_test = int(round(spec.test_fraction * k)) if k > 1 else 0
    n_test = min(max(n_test, 1 if k > 1 else 0), k - 1)
    for c in seen:
        idx = np.flatnonzero(labels == c)
        held = rng.choice(idx, size=n_test, replace=False)
        split[idx] = TRAIN
        split[held] = TEST_SEEN
    return ZslDataset(
        features=features.astype(np.float32),
        labels=labels,
        embeddings=attrs.astype(np.float32),
        seen_classes=seen,
        unseen_classes=unseen,
        split=split,
    )


# -- batching ----------------------------------------------------------------------

@dataclass
class Batch:
    index: np.ndarray  # dataset row indices
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    proto: np.ndarray | None


class BatchIterator:
    """Seeded shuffled mini-batches over one split; the order depends only on (seed, epoch)."""

    def __init__(self, ds: ZslDataset, batch_size: int, seed: int, prototypes: PrototypeTable | None = None,
                 split: int = TRAIN):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.ds = ds
        self.batch_size = batch_size
        self.seed = seed
        self.prototypes = prototypes
        self.pool = ds.indices(split)
        self.epoch = 0

    def __len__(self):
        return -(-self.pool.size // self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, epoch])
        return self.pool[rng.permutation(self.pool.size)]

    def __iter__(self) -> Iterator[Batch]:
        order = self.order(self.epoch)
        self.epoch += 1
        for s in range(0, order.size, self.batch_size):
            idx = order[s:s + self.batch_size]
            y = self.ds.labels[idx]
            proto = self.prototypes.lookup(y) if self.prototypes is not None else None
            yield Batch(idx, self.ds.features[idx], y, self.ds.embeddings[y], proto)


def batch_iterator(ds: ZslDataset, batch_size: int, seed: int, prototypes: PrototypeTable | None = None):
    """One epoch of batches; see BatchIterator for repeated epochs."""
    return iter(BatchIterator(ds, batch_size, seed, prototypes))
