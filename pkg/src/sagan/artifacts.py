"""Checkpoint directories and the pipeline manifest."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import DataError, load_feature_file, save_feature_file
from .engine import Tensor


class MissingArtifact(DataError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(directory, params: dict[str, Tensor], meta: dict) -> list[Path]:
    """One ZSF1 file per parameter plus ``manifest.json`` with names, shapes and ``meta``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    entries = []
    for name, p in params.items():
        path = d / f"{name}.zsf"
        save_feature_file(path, p.data)
        paths.append(path)
        entries.append({"name": name, "file": path.name, "shape": list(p.shape)})
    man = d / "manifest.json"
    man.write_text(json.dumps({"parameters": entries, **meta}, indent=2, sort_keys=True) + "\n")
    return paths + [man]


def load_checkpoint(directory, producer: str = "") -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    man = d / "manifest.json"
    if not man.exists():
        hint = f"; run `sagan {producer}` first" if producer else ""
        raise MissingArtifact(f"no checkpoint at {d}{hint}")
    meta = json.loads(man.read_text())
    arrays = {}
    for e in meta.pop("parameters"):
        arr = load_feature_file(d / e["file"])
        if list(arr.shape) != e["shape"]:
            raise DataError(f"{d / e['file']}: shape {arr.shape} does not match manifest {e['shape']}")
        arrays[e["name"]] = arr
    return arrays, meta


def assign(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    missing = set(params) - set(arrays)
    if missing:
        raise DataError(f"checkpoint lacks parameters {sorted(missing)}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise DataError(f"parameter {name}: checkpoint shape {arrays[name].shape} != model shape {p.shape}")
        p.data = arrays[name].astype(p.dtype)


@dataclass
class PipelineManifest:
    path: Path
    stages: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "PipelineManifest":
        p = Path(path)
        if not p.exists():
            return cls(p)
        return cls(p, json.loads(p.read_text())["stages"])

    def record(self, stage: str, outputs, seed: int, wall_time: float, **extra) -> None:
        root = self.path.parent
        files = [{"path": str(Path(o).relative_to(root)), "sha256": sha256_file(o)} for o in outputs]
        self.stages = [s for s in self.stages if s["stage"] != stage]
        self.stages.append({"stage": stage, "seed": seed, "wall_time": round(wall_time, 3),
                            "outputs": files, **extra})
        self.save()

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps({"stages": self.stages}, indent=2) + "\n")

    def verify(self) -> list[str]:
        """Problems found re-checking every recorded file; empty when all match."""
        root = self.path.parent
        problems = []
        for s in self.stages:
            for f in s["outputs"]:
                p = root / f["path"]
                if not p.exists():
                    problems.append(f"{s['stage']}: {f['path']} is missing")
                elif sha256_file(p) != f["sha256"]:
                    problems.append(f"{s['stage']}: {f['path']} hash mismatch")
        return problems


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False
