"""Stage 2: prototype-conditioned WGAN-GP in the mapped space, reconstruction
WGAN back to the original space, and an optional VAE head."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataio import TRAIN, BatchIterator, DataError, PrototypeTable, ZslDataset
from .engine import (
    MLP,
    Adam,
    Linear,
    NumericError,
    Tape,
    Tensor,
    concat,
    exp,
    gradient_norm_penalty,
    input_gradient,
    kl_standard_normal,
    leaky_relu,
    mse,
    no_record,
)
from .engine.nn import named_parameters
from .mapping import ConfigError, MappingModel, TrainingDiverged
from .seeding import derive_seed

log = logging.getLogger(__name__)

MODES = ("sa-wgan", "sa-vaegan")


@dataclass
class GanConfig:
    gamma_m: float = 1.0
    gamma_r: float = 0.1
    gp_lambda: float = 10.0
    critic_steps: int = 5
    d_z: int | None = None  # None -> d_a
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-4
    hidden: int = 4096
    slope: float = 0.2
    mode: str = "sa-vaegan"
    proto_condition: bool = True
    seed: int = 0

    def validate(self) -> None:
        if min(self.gamma_m, self.gamma_r, self.gp_lambda) < 0:
            raise ConfigError("gamma_m, gamma_r and gp_lambda must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.critic_steps < 1 or self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("critic_steps >= 1, batch_size >= 1, epochs >= 0 and lr > 0 required")

    @property
    def vae(self) -> bool:
        return self.mode == "sa-vaegan"


class Encoder:
    """(x_m, a) -> hidden -> (mu, logvar)."""

    def __init__(self, n_in: int, hidden: int, d_z: int, rng, slope: float = 0.2, name: str = "E"):
        self.body = MLP(n_in, hidden, d_z, rng, slope=slope, name=f"{name}.mu")
        self.logvar_head = Linear(hidden, d_z, rng, name=f"{name}.logvar")

    def __call__(self, *xs: Tensor) -> tuple[Tensor, Tensor]:
        x = xs[0] if len(xs) == 1 else concat(xs, axis=1)
        h = leaky_relu(self.body.hidden(x), self.body.slope)
        return self.body.out(h), self.logvar_head(h)

    def parameters(self) -> list[Tensor]:
        return self.body.parameters() + self.logvar_head.parameters()


@dataclass
class ModelBundle:
    mapping: MappingModel | None
    prototypes: PrototypeTable
    embeddings: np.ndarray
    G: MLP
    D: MLP
    G2: MLP | None
    D2: MLP | None
    E: Encoder | None
    config: GanConfig
    d_z: int

    def generator_parameters(self) -> list[Tensor]:
        ps = self.G.parameters()
        if self.G2 is not None:
            ps += self.G2.parameters()
        if self.E is not None:
            ps += self.E.parameters()
        return ps

    def named_parameters(self) -> dict[str, Tensor]:
        return named_parameters(self.mapping, self.G, self.D, self.G2, self.D2, self.E)

    def map_features(self, x: np.ndarray) -> np.ndarray:
        return self.mapping.map(x) if self.mapping is not None else np.asarray(x, dtype=np.float32)


def build_bundle(d_v: int, d_m: int, d_a: int, cfg: GanConfig, prototypes: PrototypeTable,
                 embeddings: np.ndarray, mapping: MappingModel | None = None) -> ModelBundle:
    cfg.validate()
    d_z = cfg.d_z or d_a
    rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    h, s = cfg.hidden, cfg.slope
    d_in = d_m + d_a + (d_m if cfg.proto_condition else 0)
    G = MLP(d_z + d_a, h, d_m, rng, slope=s, name="G")
    D = MLP(d_in, h, 1, rng, slope=s, name="D")
    G2 = MLP(d_m + d_a, h, d_v, rng, slope=s, name="G2")
    D2 = MLP(d_v + d_a + (d_v if cfg.proto_condition else 0), h, 1, rng, slope=s, name="D2")
    E = Encoder(d_m + d_a, h, d_z, rng, slope=s, name="E") if cfg.vae else None
    return ModelBundle(mapping, prototypes, np.asarray(embeddings, np.float32), G, D, G2, D2, E, cfg, d_z)


# -- losses ---------------------------------------------------------------------------

def critic_fn(D: MLP, a: Tensor, proto: Tensor | None) -> Callable[[Tensor], Tensor]:
    """The critic as a function of the feature alone, conditions held fixed."""
    if proto is None:
        return lambda x: D(x, a)
    return lambda x: D(x, a, proto)


def gradient_penalty(critic: Callable[[Tensor], Tensor], real: Tensor, fake: Tensor, alpha: np.ndarray,
                     lam: float) -> Tensor:
    """lam * mean((||d critic / d x_hat|| - 1)^2) at x_hat = alpha*real + (1-alpha)*fake.

    ``alpha`` has one entry per row. The gradient is taken with respect to the
    interpolated feature only; conditions are constants.
    """
    alpha = np.asarray(alpha, dtype=real.dtype).reshape(-1, 1)
    x_hat = Tensor(alpha * real.data + (1.0 - alpha) * fake.data, requires_grad=True, dtype=real.dtype)
    grad = input_gradient(critic, x_hat)
    return gradient_norm_penalty(grad) * lam


def wasserstein_gap(critic: Callable[[Tensor], Tensor], real: Tensor, fake: Tensor) -> Tensor:
    """E[critic(real)] - E[critic(fake)]."""
    return critic(real).mean() - critic(fake).mean()


def critic_loss(critic, real: Tensor, fake: Tensor, alpha, lam: float) -> tuple[Tensor, Tensor]:
    """Loss minimized by the critic (fake is treated as a constant) and the gap."""
    gap = wasserstein_gap(critic, real, fake.detach())
    loss = -gap
    if lam > 0:
        loss = loss + gradient_penalty(critic, real, fake, alpha, lam)
    return loss, gap


def generator_adv_loss(critic, fake: Tensor) -> Tensor:
    return -critic(fake).mean()


@dataclass
class WganLosses:
    critic_loss: Tensor
    generator_loss: Tensor
    gap: Tensor
    fake: Tensor


def loss_mwgan(D: MLP, G: MLP, real_m: Tensor, a: Tensor, proto_m: Tensor | None, z: np.ndarray,
               alpha: np.ndarray, lam: float) -> WganLosses:
    """Mapped-space WGAN-GP. Fakes share each real row's (a, prototype) condition."""
    fake = G(Tensor(z, dtype=real_m.dtype), a)
    critic = critic_fn(D, a, proto_m)
    c_loss, gap = critic_loss(critic, real_m, fake, alpha, lam)
    return WganLosses(c_loss, generator_adv_loss(critic, fake), gap, fake)


def loss_rwgan(D2: MLP, G2: MLP, real_x: Tensor, source_m: Tensor, a: Tensor, proto: Tensor | None,
               alpha: np.ndarray, lam: float) -> WganLosses:
    """Reconstruction WGAN-GP: fake = G2(source_m, a) against real original features."""
    fake = G2(source_m, a)
    critic = critic_fn(D2, a, proto)
    c_loss, gap = critic_loss(critic, real_x, fake, alpha, lam)
    return WganLosses(c_loss, generator_adv_loss(critic, fake), gap, fake)


@dataclass
class VaeLosses:
    total: Tensor
    kl: Tensor
    recon_m: Tensor
    recon_x: Tensor


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return mu + exp(logvar * 0.5) * Tensor(eps, dtype=mu.dtype)


def vae_forward(E: Encoder, G: MLP, G2: MLP, x_m: Tensor, x: Tensor, a: Tensor, eps: np.ndarray) -> VaeLosses:
    """KL(E(x_m, a) || N(0, I)) + MSE(G(z, a), x_m) + MSE(G2(x_m, a), x)."""
    mu, logvar = E(x_m, a)
    z = reparameterize(mu, logvar, eps)
    kl = kl_standard_normal(mu, logvar)
    rec_m = mse(G(z, a), x_m)
    rec_x = mse(G2(x_m, a), x)
    return VaeLosses(kl + rec_m + rec_x, kl, rec_m, rec_x)


# -- training ---------------------------------------------------------------------------

@dataclass
class Stage2Result:
    bundle: ModelBundle
    trace: list[dict] = field(default_factory=list)


def train_stage2(mapped_features: np.ndarray, ds: ZslDataset, prototypes: PrototypeTable, cfg: GanConfig,
                 mapping: MappingModel | None = None,
                 hook: Callable[[dict], None] | None = None) -> Stage2Result:
    """Alternate ``critic_steps`` critic updates with one generator update.

    One epoch is one shuffled pass of critic batches over the train split; the
    generator update after each group of critic batches reuses the last batch.
    Mapped prototypes are read from ``prototypes.mapped``, never recomputed.
    ``hook`` sees the condition tensors of every critic batch.
    """
    cfg.validate()
    if prototypes.mapped is None:
        raise DataError("stage 2 needs mapped prototypes from stage 1")
    d_m = mapped_features.shape[1]
    bundle = build_bundle(ds.d_v, d_m, ds.d_a, cfg, prototypes, ds.embeddings, mapping)
    use_r = cfg.gamma_r > 0
    if not use_r and not cfg.vae:
        bundle.G2 = bundle.D2 = None
    if not use_r:
        bundle.D2 = None

    opt_d = Adam(bundle.D.parameters(), lr=cfg.lr)
    opt_d2 = Adam(bundle.D2.parameters(), lr=cfg.lr) if use_r else None
    gen_params = bundle.generator_parameters()
    opt_g = Adam(gen_params, lr=cfg.lr)

    noise = np.random.default_rng(derive_seed(cfg.seed, "noise"))
    batches = BatchIterator(ds, cfg.batch_size, derive_seed(cfg.seed, "batches"), prototypes, split=TRAIN)
    trace = []
    for epoch in range(cfg.epochs):
        stats = {"critic": [], "gap": [], "critic2": [], "gap2": [], "gen": [], "vae": []}
        n_g = n_d2 = 0
        for b, batch in enumerate(batches):
            try:
                cond = _conditions(batch, mapped_features, prototypes, cfg)
                if hook is not None:
                    hook(cond)
                _critic_step(bundle, cond, cfg, noise, opt_d, opt_d2, stats)
                n_d2 += int(use_r)
                if (b + 1) % cfg.critic_steps == 0:
                    _generator_step(bundle, cond, cfg, noise, opt_g, gen_params, stats)
                    n_g += 1
            except NumericError as e:
                raise TrainingDiverged(f"stage 2 diverged at epoch {epoch}, batch {b}: {e}") from e
        row = {k: float(np.mean(v)) if v else 0.0 for k, v in stats.items()}
        row.update(epoch=epoch, generator_updates=n_g, d2_updates=n_d2)
        trace.append(row)
        log.info("gan epoch %d: critic %.4f gap %.4f gen %.4f vae %.4f",
                 epoch, row["critic"], row["gap"], row["gen"], row["vae"])
    return Stage2Result(bundle, trace)


def _conditions(batch, mapped_features, prototypes, cfg) -> dict:
    dt = np.float32
    proto_m = prototypes.lookup(batch.y, "mapped")
    return {
        "x": Tensor(batch.x, dtype=dt),
        "x_m": Tensor(mapped_features[batch.index], dtype=dt),
        "a": Tensor(batch.a, dtype=dt),
        "proto_m": Tensor(proto_m, dtype=dt) if cfg.proto_condition else None,
        "proto": Tensor(batch.proto, dtype=dt) if cfg.proto_condition else None,
        "n": batch.index.size,
    }


def _critic_step(bundle, c, cfg, noise, opt_d, opt_d2, stats) -> None:
    n = c["n"]
    z = noise.standard_normal((n, bundle.d_z))
    alpha = noise.uniform(size=n)
    with no_record():
        fake_m = bundle.G(Tensor(z, dtype=np.float32), c["a"])
    with Tape() as tape:
        crit = critic_fn(bundle.D, c["a"], c["proto_m"])
        loss, gap = critic_loss(crit, c["x_m"], fake_m, alpha, cfg.gp_lambda)
        loss = loss * cfg.gamma_m
        grads = tape.gradient(loss, bundle.D.parameters())
    opt_d.step(grads)
    stats["critic"].append(loss.item())
    stats["gap"].append(gap.item())

    if opt_d2 is not None:
        alpha2 = noise.uniform(size=n)
        with no_record():
            fake_x = bundle.G2(fake_m, c["a"])
        with Tape() as tape:
            crit2 = critic_fn(bundle.D2, c["a"], c["proto"])
            loss2, gap2 = critic_loss(crit2, c["x"], fake_x, alpha2, cfg.gp_lambda)
            loss2 = loss2 * cfg.gamma_r
            grads2 = tape.gradient(loss2, bundle.D2.parameters())
        opt_d2.step(grads2)
        stats["critic2"].append(loss2.item())
        stats["gap2"].append(gap2.item())


def _generator_step(bundle, c, cfg, noise, opt_g, gen_params, stats) -> None:
    n = c["n"]
    z = noise.standard_normal((n, bundle.d_z))
    with Tape() as tape:
        fake_m = bundle.G(Tensor(z, dtype=np.float32), c["a"])
        loss = generator_adv_loss(critic_fn(bundle.D, c["a"], c["proto_m"]), fake_m) * cfg.gamma_m
        if cfg.gamma_r > 0:
            fake_x = bundle.G2(fake_m, c["a"])
            loss = loss + generator_adv_loss(critic_fn(bundle.D2, c["a"], c["proto"]), fake_x) * cfg.gamma_r
        if cfg.vae:
            eps = noise.standard_normal((n, bundle.d_z))
            v = vae_forward(bundle.E, bundle.G, bundle.G2, c["x_m"], c["x"], c["a"], eps)
            loss = loss + v.total
            stats["vae"].append(v.total.item())
        grads = tape.gradient(loss, gen_params)
    opt_g.step(grads)
    stats["gen"].append(loss.item())


# -- synthesis ------------------------------------------------------------------------------

def synthesize_features(G: MLP, embeddings: np.ndarray, classes, n_per_class: int, seed: int,
                        d_z: int | None = None, noise_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``n_per_class`` rows G(z, a_c) per class; class c draws z from its own stream."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    embeddings = np.asarray(embeddings, dtype=np.float32)
    d_z = d_z or (G.n_in - embeddings.shape[1])
    feats, labels = [], []
    for c in np.asarray(classes, dtype=np.int64).ravel():
        if not 0 <= c < embeddings.shape[0]:
            raise DataError(f"unknown class id {c}")
        rng = np.random.default_rng([seed, int(c)])
        z = rng.standard_normal((n_per_class, d_z)) * noise_scale
        a = np.repeat(embeddings[c:c + 1], n_per_class, axis=0)
        with no_record():
            feats.append(G(Tensor(z, dtype=np.float32), Tensor(a)).data)
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    if not feats:
        return np.zeros((0, G.n_out), np.float32), np.zeros(0, np.int64)
    return np.concatenate(feats), np.concatenate(labels)
