"""Final classifier, ZSL / GZSL / few-shot protocols, metrics and structure drift."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataio import (
    TEST_SEEN,
    TEST_UNSEEN,
    TRAIN,
    ZslDataset,
    save_feature_file,
    save_label_file,
)
from .engine import Adam, ContractError, Linear, Tape, Tensor, no_record, softmax_cross_entropy
from .generation import ModelBundle, synthesize_features
from .seeding import derive_seed


class ProtocolError(ValueError):
    pass


# -- metrics -------------------------------------------------------------------------

def per_class_accuracy(predictions, labels, class_set) -> dict[int, float]:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    out = {}
    for c in class_set:
        mask = labels == c
        n = int(mask.sum())
        if n == 0:
            raise ProtocolError(f"class {int(c)} has no test samples")
        out[int(c)] = float(np.count_nonzero(predictions[mask] == c)) / n
    return out


def mca(predictions, labels, class_set) -> float:
    """Mean of per-class top-1 accuracies over ``class_set``."""
    class_set = list(class_set)
    if not class_set:
        raise ProtocolError("class_set is empty")
    accs = per_class_accuracy(predictions, labels, class_set)
    return float(np.mean(list(accs.values())))


def harmonic_mean(s: float, u: float) -> float:
    if s < 0 or u < 0:
        raise ContractError(f"accuracies must be non-negative, got s={s}, u={u}")
    if s + u == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


# -- classifier ----------------------------------------------------------------------------

class LinearSoftmaxClassifier:
    """Affine softmax model trained with Adam on mini-batches."""

    def __init__(self, classes, dim: int, lr: float = 1e-3, epochs: int = 50, batch_size: int = 256,
                 seed: int = 0, beta1: float = 0.5):
        self.classes = np.asarray(sorted(set(int(c) for c in classes)), dtype=np.int64)
        self.lr, self.epochs, self.batch_size, self.seed, self.beta1 = lr, epochs, batch_size, seed, beta1
        self.layer = Linear(dim, self.classes.size, np.random.default_rng(derive_seed(seed, "clf-init")), name="clf")

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LinearSoftmaxClassifier":
        idx = np.searchsorted(self.classes, y)
        if idx.size and (idx.max() >= self.classes.size or not np.array_equal(self.classes[idx], y)):
            raise ProtocolError("training labels outside the classifier's class set")
        params = self.layer.parameters()
        opt = Adam(params, lr=self.lr, beta1=self.beta1)
        x = np.asarray(x, dtype=np.float32)
        for epoch in range(self.epochs):
            order = np.random.default_rng([derive_seed(self.seed, "clf-batches"), epoch]).permutation(len(y))
            for s in range(0, order.size, self.batch_size):
                b = order[s:s + self.batch_size]
                with Tape() as tape:
                    loss = softmax_cross_entropy(self.layer(Tensor(x[b])), idx[b])
                    grads = tape.gradient(loss, params)
                opt.step(grads)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        with no_record():
            logits = self.layer(Tensor(np.asarray(x, dtype=np.float32))).data
        return self.classes[np.argmax(logits, axis=1)]


@dataclass
class ClassifierSettings:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 256


PredictHook = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _fit_predict(classes, train_x, train_y, test_x, test_y, settings, seed, hook: PredictHook | None):
    if hook is not None:
        return hook(test_x, test_y)
    clf = LinearSoftmaxClassifier(classes, train_x.shape[1], settings.lr, settings.epochs,
                                  settings.batch_size, seed)
    return clf.fit(train_x, train_y).predict(test_x)


# -- reports --------------------------------------------------------------------------------

@dataclass
class MetricsReport:
    protocol: str
    mca_u: float | None = None
    mca_s: float | None = None
    h: float | None = None
    per_class: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0
    runtime: float | None = None  # seconds; kept out of the serialized files

    def _flat(self) -> dict:
        out = {"protocol": self.protocol, "seed": self.seed}
        for k in ("mca_u", "mca_s", "h"):
            v = getattr(self, k)
            if v is not None:
                out[k] = round(100.0 * v, 4)
        for c, v in sorted(self.per_class.items()):
            out[f"acc_class_{c}"] = round(100.0 * v, 4)
        for k, v in sorted(self.config.items()):
            out[f"config.{k}"] = v
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self._flat().items())

    def to_json(self) -> str:
        return json.dumps(self._flat(), indent=2, sort_keys=True) + "\n"

    def write(self, directory, stem: str) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{stem}.txt", d / f"{stem}.json"]
        paths[0].write_text(self.to_text())
        paths[1].write_text(self.to_json())
        return paths


def parse_metrics_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


# -- protocols ----------------------------------------------------------------------------

def _mapped_split(bundle: ModelBundle, ds: ZslDataset, split: int) -> tuple[np.ndarray, np.ndarray]:
    idx = ds.indices(split)
    return bundle.map_features(ds.features[idx]), ds.labels[idx]


def _synth(bundle: ModelBundle, classes, n_syn: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n_syn <= 0:
        return np.zeros((0, bundle.G.n_out), np.float32), np.zeros(0, np.int64)
    return synthesize_features(bundle.G, bundle.embeddings, classes, n_syn, derive_seed(seed, "synth"), bundle.d_z)


def evaluate_zsl(bundle: ModelBundle, ds: ZslDataset, n_syn: int, seed: int,
                 settings: ClassifierSettings | None = None, hook: PredictHook | None = None) -> MetricsReport:
    """Classifier over unseen classes trained on synthesized features only."""
    settings = settings or ClassifierSettings()
    unseen = np.sort(ds.unseen_classes)
    test_x, test_y = _mapped_split(bundle, ds, TEST_UNSEEN)
    if test_y.size == 0:
        raise ProtocolError("test-unseen split is empty")
    if n_syn < 1 and hook is None:
        raise ProtocolError("ZSL needs n_syn >= 1 synthesized samples per unseen class")
    sx, sy = _synth(bundle, unseen, n_syn, seed)
    pred = _fit_predict(unseen, sx, sy, test_x, test_y, settings, derive_seed(seed, "zsl"), hook)
    per = per_class_accuracy(pred, test_y, unseen)
    return MetricsReport("zsl", mca_u=float(np.mean(list(per.values()))), per_class=per, seed=seed)


def evaluate_gzsl(bundle: ModelBundle, ds: ZslDataset, n_syn: int, seed: int,
                  settings: ClassifierSettings | None = None, hook: PredictHook | None = None) -> MetricsReport:
    """Classifier over all classes trained on real seen + synthesized unseen features.

    Its class set is the set of labels it is trained on, so with ``n_syn=0``
    it can never predict an unseen class.
    """
    settings = settings or ClassifierSettings()
    seen, unseen = np.sort(ds.seen_classes), np.sort(ds.unseen_classes)
    tr_x, tr_y = _mapped_split(bundle, ds, TRAIN)
    ts_x, ts_y = _mapped_split(bundle, ds, TEST_SEEN)
    tu_x, tu_y = _mapped_split(bundle, ds, TEST_UNSEEN)
    if ts_y.size == 0 or tu_y.size == 0:
        raise ProtocolError("GZSL needs non-empty test-seen and test-unseen splits")
    sx, sy = _synth(bundle, unseen, n_syn, seed)
    train_x, train_y = np.concatenate([tr_x, sx]), np.concatenate([tr_y, sy])
    test_x, test_y = np.concatenate([ts_x, tu_x]), np.concatenate([ts_y, tu_y])
    pred = _fit_predict(np.unique(train_y), train_x, train_y, test_x, test_y, settings,
                        derive_seed(seed, "gzsl"), hook)
    n_s = ts_y.size
    per_s = per_class_accuracy(pred[:n_s], ts_y, seen)
    per_u = per_class_accuracy(pred[n_s:], tu_y, unseen)
    s, u = float(np.mean(list(per_s.values()))), float(np.mean(list(per_u.values())))
    return MetricsReport("gzsl", mca_u=u, mca_s=s, h=harmonic_mean(s, u), per_class={**per_s, **per_u}, seed=seed)


@dataclass
class FewShotResult:
    shots: int
    fsl: MetricsReport
    gfsl: MetricsReport
    train_index: np.ndarray  # dataset rows moved into classifier training


def few_shot_protocol(bundle: ModelBundle, ds: ZslDataset, shots: int, seed: int, n_syn: int = 300,
                      settings: ClassifierSettings | None = None) -> FewShotResult:
    """Move ``shots`` seeded test-unseen samples per novel class into training.

    FSL: classifier over novel classes (synthesized + real shots), tested on the
    remaining novel samples. GFSL: classifier over all classes, seen-train data
    included, tested on test-seen plus the remaining novel samples.
    """
    if shots < 1:
        raise ProtocolError("shots must be >= 1")
    settings = settings or ClassifierSettings()
    rng = np.random.default_rng(derive_seed(seed, "shots"))
    novel = np.sort(ds.unseen_classes)
    tu = ds.indices(TEST_UNSEEN)
    picked = []
    for c in novel:
        rows = tu[ds.labels[tu] == c]
        if rows.size <= shots:
            raise ProtocolError(f"class {int(c)} has {rows.size} samples; cannot reserve {shots} shots and keep a test set")
        picked.append(np.sort(rng.choice(rows, size=shots, replace=False)))
    shot_idx = np.concatenate(picked)
    test_u = np.setdiff1d(tu, shot_idx)

    shot_x, shot_y = bundle.map_features(ds.features[shot_idx]), ds.labels[shot_idx]
    tu_x, tu_y = bundle.map_features(ds.features[test_u]), ds.labels[test_u]
    sx, sy = _synth(bundle, novel, n_syn, seed)

    fx, fy = np.concatenate([sx, shot_x]), np.concatenate([sy, shot_y])
    pred = _fit_predict(novel, fx, fy, tu_x, tu_y, settings, derive_seed(seed, "fsl"), None)
    per = per_class_accuracy(pred, tu_y, novel)
    fsl = MetricsReport("fsl", mca_u=float(np.mean(list(per.values()))), per_class=per, seed=seed,
                        config={"shots": shots})

    tr_x, tr_y = _mapped_split(bundle, ds, TRAIN)
    ts_x, ts_y = _mapped_split(bundle, ds, TEST_SEEN)
    gx, gy = np.concatenate([tr_x, fx]), np.concatenate([tr_y, fy])
    test_x, test_y = np.concatenate([ts_x, tu_x]), np.concatenate([ts_y, tu_y])
    pred = _fit_predict(np.unique(gy), gx, gy, test_x, test_y, settings, derive_seed(seed, "gfsl"), None)
    n_s = ts_y.size
    per_s = per_class_accuracy(pred[:n_s], ts_y, np.sort(ds.seen_classes))
    per_u = per_class_accuracy(pred[n_s:], tu_y, novel)
    s, u = float(np.mean(list(per_s.values()))), float(np.mean(list(per_u.values())))
    gfsl = MetricsReport("gfsl", mca_u=u, mca_s=s, h=harmonic_mean(s, u), per_class={**per_s, **per_u},
                         seed=seed, config={"shots": shots})
    return FewShotResult(shots, fsl, gfsl, shot_idx)


# -- structure drift ------------------------------------------------------------------------

def wasserstein_1d(u, v) -> float:
    """W1 between two equal-size empirical samples: mean |sorted(u) - sorted(v)|."""
    u, v = np.sort(np.asarray(u, float)), np.sort(np.asarray(v, float))
    if u.size != v.size:
        raise ContractError(f"samples differ in size: {u.size} vs {v.size}")
    return float(np.mean(np.abs(u - v))) if u.size else 0.0


@dataclass
class StructureReport:
    l2_change: float
    w_dist: float
    per_class: dict = field(default_factory=dict)  # class -> (l2_change, w_dist)

    def to_text(self) -> str:
        lines = [f"l2_change = {self.l2_change:.6f}", f"w_dist = {self.w_dist:.6f}"]
        for c, (l2, w) in sorted(self.per_class.items()):
            lines.append(f"class_{c}.l2_change = {l2:.6f}")
            lines.append(f"class_{c}.w_dist = {w:.6f}")
        return "\n".join(lines) + "\n"


def drift_from_distances(d, d_mapped, labels=None) -> StructureReport:
    """Drift between two sets of sample-to-prototype distances, each scaled by its mean."""
    d, d_mapped = np.asarray(d, float).ravel(), np.asarray(d_mapped, float).ravel()
    if d.size != d_mapped.size:
        raise ContractError(f"{d.size} original distances but {d_mapped.size} mapped distances")
    dn = d / d.mean() if d.size and d.mean() > 0 else d
    dm = d_mapped / d_mapped.mean() if d_mapped.size and d_mapped.mean() > 0 else d_mapped
    per = {}
    if labels is not None:
        labels = np.asarray(labels)
        for c in np.unique(labels):
            m = labels == c
            per[int(c)] = (float(np.mean(np.abs(dn[m] - dm[m]))), wasserstein_1d(dn[m], dm[m]))
    l2 = float(np.mean(np.abs(dn - dm))) if d.size else 0.0
    return StructureReport(l2, wasserstein_1d(dn, dm), per)


def structure_change(x, x_proto, mapped, mapped_proto, labels=None) -> StructureReport:
    """Compare each sample's distance to its own prototype before and after mapping.

    ``x_proto`` / ``mapped_proto`` hold the prototype row of each sample in the
    respective space.
    """
    x, x_proto = np.asarray(x, float), np.asarray(x_proto, float)
    mapped, mapped_proto = np.asarray(mapped, float), np.asarray(mapped_proto, float)
    if x.shape[0] != mapped.shape[0] or x.shape != x_proto.shape or mapped.shape != mapped_proto.shape:
        raise ContractError("original and mapped sample sets must align row for row")
    d = np.linalg.norm(x - x_proto, axis=1)
    dm = np.linalg.norm(mapped - mapped_proto, axis=1)
    return drift_from_distances(d, dm, labels)


def dataset_structure_change(ds: ZslDataset, prototypes, mapped_features: np.ndarray) -> StructureReport:
    """Drift over the train split using the original and mapped prototype tables."""
    tr = ds.indices(TRAIN)
    y = ds.labels[tr]
    return structure_change(ds.features[tr], prototypes.lookup(y), mapped_features[tr],
                            prototypes.lookup(y, "mapped"), y)


# -- export -----------------------------------------------------------------------------------

def export_features(bundle: ModelBundle, ds: ZslDataset, directory, n_syn: int, seed: int) -> list[Path]:
    """Real mapped features of every row plus synthesized unseen features, with labels."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    real = bundle.map_features(ds.features)
    sx, sy = _synth(bundle, np.sort(ds.unseen_classes), n_syn, seed)
    paths = [d / "real_mapped.zsf", d / "real_labels.zsl", d / "synth_mapped.zsf", d / "synth_labels.zsl"]
    save_feature_file(paths[0], real)
    save_label_file(paths[1], ds.labels)
    save_feature_file(paths[2], sx)
    save_label_file(paths[3], sy)
    return paths
