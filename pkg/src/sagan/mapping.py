"""Stage 1: discriminative, structure-preserving feature mapping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import TRAIN, BatchIterator, PrototypeTable, ZslDataset, compute_prototypes
from .engine import (
    MLP,
    Adam,
    ContractError,
    Linear,
    NumericError,
    Tape,
    Tensor,
    absolute,
    gather_rows,
    no_record,
    reduce_sum,
    row_l2_norm,
    softmax_cross_entropy,
)
from .engine.tensor import maximum
from .seeding import derive_seed

log = logging.getLogger(__name__)

METRICS = ("l1", "l2", "cosine")


class ConfigError(ValueError):
    pass


class TrainingDiverged(NumericError):
    pass


@dataclass
class MappingConfig:
    gamma_c: float = 0.01
    gamma_s: float = 1.0
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-4
    d_m: int = 1024
    hidden: int = 4096
    slope: float = 0.2
    metric: str = "l2"
    seed: int = 0

    def validate(self) -> None:
        if self.gamma_c < 0 or self.gamma_s < 0:
            raise ConfigError("gamma_c and gamma_s must be >= 0")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown distance metric {self.metric!r}; choose from {METRICS}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")


class MappingModel:
    """Mapping net f_m, classifier head f_c and the trainable class centers."""

    def __init__(self, d_v: int, n_seen: int, cfg: MappingConfig, rng: np.random.Generator):
        self.f_m = MLP(d_v, cfg.hidden, cfg.d_m, rng, slope=cfg.slope, name="f_m")
        self.f_c = Linear(cfg.d_m, n_seen, rng, name="f_c")
        # centers start at zero and are optimized like any other parameter
        self.centers = Tensor(np.zeros((n_seen, cfg.d_m)), requires_grad=True, name="centers")

    def parameters(self) -> list[Tensor]:
        return self.f_m.parameters() + self.f_c.parameters() + [self.centers]

    def map(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """f_m applied to raw features without recording."""
        with no_record():
            parts = [self.f_m(Tensor(x[i:i + chunk])).data for i in range(0, x.shape[0], chunk)]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.f_m.n_out), np.float32)


# -- distances -------------------------------------------------------------------

def structure_distances(x: np.ndarray, proto: np.ndarray, metric: str = "l2") -> np.ndarray:
    """Row-wise sample-to-prototype distances as plain arrays (the fixed targets)."""
    x = np.asarray(x, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64)
    if metric == "l2":
        return np.sqrt(((x - proto) ** 2).sum(axis=1))
    if metric == "l1":
        return np.abs(x - proto).sum(axis=1)
    if metric == "cosine":
        num = (x * proto).sum(axis=1)
        den = np.maximum(np.linalg.norm(x, axis=1) * np.linalg.norm(proto, axis=1), 1e-12)
        return 1.0 - num / den
    raise ConfigError(f"unknown distance metric {metric!r}; choose from {METRICS}")


def row_distance(u: Tensor, v: Tensor, metric: str = "l2") -> Tensor:
    """Differentiable row-wise distance, shape (n, 1)."""
    if metric == "l2":
        return row_l2_norm(u - v)
    if metric == "l1":
        return reduce_sum(absolute(u - v), axis=1)
    if metric == "cosine":
        den = maximum(row_l2_norm(u) * row_l2_norm(v), 1e-12)
        return 1.0 - reduce_sum(u * v, axis=1) / den
    raise ConfigError(f"unknown distance metric {metric!r}; choose from {METRICS}")


# -- losses --------------------------------------------------------------------------

def loss_cls(logits: Tensor, y_idx) -> Tensor:
    return softmax_cross_entropy(logits, y_idx)


def loss_center(mapped: Tensor, centers: Tensor, y_idx) -> Tensor:
    """Mean squared distance of each mapped sample to its class center."""
    d = mapped - gather_rows(centers, y_idx)
    return reduce_sum(d * d) * (1.0 / mapped.shape[0])


def loss_sp(mapped: Tensor, mapped_proto: Tensor, orig_dist, metric: str = "l2") -> Tensor:
    """Mean squared change of sample-to-prototype distance between the two spaces.

    ``orig_dist`` holds the precomputed original-space distances; ``mapped_proto``
    must be the prototypes pushed through the current mapping.
    """
    l = Tensor(np.asarray(orig_dist).reshape(-1, 1), dtype=mapped.dtype)
    d = l - row_distance(mapped, mapped_proto, metric)
    return reduce_sum(d * d) * (1.0 / mapped.shape[0])


@dataclass
class MappingLosses:
    total: Tensor
    cls: Tensor
    center: Tensor
    sp: Tensor
    logits: Tensor


def mapping_objective(model: MappingModel, x: np.ndarray, y_idx: np.ndarray, proto: np.ndarray,
                      orig_dist: np.ndarray, cfg: MappingConfig) -> MappingLosses:
    """loss_cls + gamma_c * loss_center + gamma_s * loss_sp on one batch.

    ``y_idx`` indexes seen classes (0..n_seen-1), ``proto`` holds each row's
    original-space prototype.
    """
    n_seen = model.centers.shape[0]
    y_idx = np.asarray(y_idx)
    if y_idx.size and (y_idx.min() < 0 or y_idx.max() >= n_seen):
        raise ContractError("batch labels must index seen classes")
    mapped = model.f_m(Tensor(x))
    logits = model.f_c(mapped)
    l_cls = loss_cls(logits, y_idx)
    l_center = loss_center(mapped, model.centers, y_idx)
    l_sp = loss_sp(mapped, model.f_m(Tensor(proto)), orig_dist, cfg.metric)
    total = l_cls + l_center * cfg.gamma_c + l_sp * cfg.gamma_s
    return MappingLosses(total, l_cls, l_center, l_sp, logits)


# -- training ----------------------------------------------------------------------------

@dataclass
class MappingResult:
    model: MappingModel
    prototypes: PrototypeTable  # original and mapped prototypes
    mapped_features: np.ndarray  # f_m over every dataset row
    trace: list[dict] = field(default_factory=list)
    train_accuracy: float = float("nan")
    config: MappingConfig | None = None


def seen_index(ds: ZslDataset, labels) -> np.ndarray:
    """Class ids -> positions in the sorted seen-class list."""
    seen = np.sort(ds.seen_classes)
    pos = np.searchsorted(seen, labels)
    pos = np.clip(pos, 0, seen.size - 1)
    if not np.array_equal(seen[pos], np.asarray(labels)):
        raise ContractError("labels contain classes that are not seen classes")
    return pos


def train_mapping(ds: ZslDataset, cfg: MappingConfig, prototypes: PrototypeTable | None = None) -> MappingResult:
    cfg.validate()
    prototypes = prototypes or compute_prototypes(ds)
    n_seen = ds.seen_classes.size
    model = MappingModel(ds.d_v, n_seen, cfg, np.random.default_rng(derive_seed(cfg.seed, "init")))
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)

    # original-space distances are constants: compute once for every row
    proto_all = np.zeros_like(ds.features)
    seen_rows = np.isin(ds.labels, prototypes.classes)
    proto_all[seen_rows] = prototypes.lookup(ds.labels[seen_rows])
    orig_dist = structure_distances(ds.features, proto_all, cfg.metric)

    batches = BatchIterator(ds, cfg.batch_size, derive_seed(cfg.seed, "batches"), prototypes, split=TRAIN)
    trace = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        n_seen_rows = 0
        for b, batch in enumerate(batches):
            y_idx = seen_index(ds, batch.y)
            try:
                with Tape() as tape:
                    parts = mapping_objective(model, batch.x, y_idx, batch.proto, orig_dist[batch.index], cfg)
                    grads = tape.gradient(parts.total, params)
            except NumericError as e:
                raise TrainingDiverged(f"mapping diverged at epoch {epoch}, batch {b}: {e}") from e
            opt.step(grads)
            k = batch.index.size
            sums += k * np.array([parts.total.item(), parts.cls.item(), parts.center.item(), parts.sp.item()])
            n_seen_rows += k
        row = dict(zip(("total", "cls", "center", "sp"), (sums / max(n_seen_rows, 1)).tolist()))
        row["epoch"] = epoch
        trace.append(row)
        log.info("map epoch %d: total %.4f cls %.4f center %.4f sp %.4f",
                 epoch, row["total"], row["cls"], row["center"], row["sp"])

    mapped_features = model.map(ds.features)
    prototypes = PrototypeTable(prototypes.classes, prototypes.original, model.map(prototypes.original))
    tr = ds.indices(TRAIN)
    acc = float("nan")
    if tr.size:
        with no_record():
            logits = model.f_c(Tensor(mapped_features[tr])).data
        acc = float(np.mean(np.argmax(logits, axis=1) == seen_index(ds, ds.labels[tr])))
    return MappingResult(model, prototypes, mapped_features, trace, acc, cfg)
