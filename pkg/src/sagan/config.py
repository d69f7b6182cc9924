"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .dataio import SyntheticSpec
from .evaluation import ClassifierSettings
from .generation import MODES, GanConfig
from .mapping import METRICS, ConfigError, MappingConfig
from .seeding import derive_seed


@dataclass
class RunConfig:
    # data: empty data_dir means a synthetic dataset
    data_dir: str = ""
    n_seen: int = 20
    n_unseen: int = 5
    d_v: int = 64
    d_a: int = 16
    samples_per_class: int = 100
    noise_scale: float = 0.1
    test_fraction: float = 0.2
    weight_scale: float = 1.0
    # architecture
    d_m: int = 1024
    map_hidden: int = 4096
    gan_hidden: int = 4096
    d_z: int = 0  # 0 -> d_a
    slope: float = 0.2
    # stage 1
    gamma_c: float = 0.01
    gamma_s: float = 1.0
    metric: str = "l2"
    map_epochs: int = 100
    map_batch: int = 256
    map_lr: float = 1e-4
    # stage 2
    mode: str = "sa-vaegan"
    gamma_m: float = 1.0
    gamma_r: float = 0.1
    gp_lambda: float = 10.0
    critic_steps: int = 5
    proto_condition: bool = True
    gan_epochs: int = 1000
    gan_batch: int = 64
    gan_lr: float = 1e-4
    # evaluation
    n_syn: int = 300
    cls_lr: float = 1e-3
    cls_epochs: int = 50
    cls_batch: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {v}")
        self.mapping_config().validate()
        self.gan_config().validate()

    # -- per-stage views; every stage seeds from its own named sub-stream --

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(self.n_seen, self.n_unseen, self.d_v, self.d_a, self.samples_per_class,
                             self.noise_scale, derive_seed(self.seed, "data"), self.test_fraction,
                             self.weight_scale)

    def mapping_config(self, **overrides) -> MappingConfig:
        cfg = MappingConfig(
            gamma_c=self.gamma_c, gamma_s=self.gamma_s, epochs=self.map_epochs, batch_size=self.map_batch,
            lr=self.map_lr, d_m=self.d_m, hidden=self.map_hidden, slope=self.slope, metric=self.metric,
            seed=derive_seed(self.seed, "map"),
        )
        return dataclasses.replace(cfg, **overrides)

    def gan_config(self) -> GanConfig:
        return GanConfig(
            gamma_m=self.gamma_m, gamma_r=self.gamma_r, gp_lambda=self.gp_lambda, critic_steps=self.critic_steps,
            d_z=self.d_z or None, epochs=self.gan_epochs, batch_size=self.gan_batch, lr=self.gan_lr,
            hidden=self.gan_hidden, slope=self.slope, mode=self.mode, proto_condition=self.proto_condition,
            seed=derive_seed(self.seed, "gan"),
        )

    def classifier_settings(self) -> ClassifierSettings:
        return ClassifierSettings(self.cls_lr, self.cls_epochs, self.cls_batch)

    @property
    def eval_seed(self) -> int:
        return derive_seed(self.seed, "eval")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_render(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:10]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(name: str, typ: str, raw: str, where: str):
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {name} expects {typ}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{where}: {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        setattr(cfg, key, _coerce(key, types[key], raw, where))
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(), str(p))
