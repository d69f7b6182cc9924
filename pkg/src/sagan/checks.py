"""Finite-difference checks of every training objective on tiny float64 nets.

Used by ``sagan gradcheck`` and the acceptance tests.

Entries whose taped gradient is exactly zero get an absolute test instead of
the relative one: the loss is invariant to them (a distance ignores the
mapping's output bias, a Wasserstein gap ignores the critic's output bias, and
a hidden bias cancels when real and fake rows share leaky-ReLU mask counts),
so the central difference is pure rounding noise and the relative error is
noise over noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .engine import MLP, GradientPairs, Linear, Tensor, gradient_pairs, precision
from .generation import Encoder, critic_fn, gradient_penalty, loss_mwgan, loss_rwgan, vae_forward
from .mapping import METRICS, loss_center, loss_cls, loss_sp, structure_distances

TOL = 1e-3
HIDDEN = 8
BATCH = 6


@dataclass
class CheckResult:
    name: str
    max_rel: float  # over entries with a nonzero taped gradient
    n_entries: int
    n_zero: int  # entries whose taped gradient is exactly zero
    zero_residual: float  # largest |central difference| among those
    zero_bound: float
    tol: float = TOL

    @property
    def passed(self) -> bool:
        return self.max_rel <= self.tol and self.zero_residual <= self.zero_bound

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        s = f"{status} {self.name}: max relative error {self.max_rel:.2e} (tol {self.tol:.0e}) over {self.n_entries} entries"
        if self.n_zero:
            s += f"; {self.n_zero} exact-zero entries, |fd| <= {self.zero_residual:.1e} (rounding bound {self.zero_bound:.1e})"
        return s


def summarize(name: str, pairs: GradientPairs) -> CheckResult:
    zero = pairs.analytic == 0.0
    rel = pairs.relative_error()[~zero]
    resid = np.abs(pairs.numeric[zero])
    return CheckResult(name, float(rel.max()) if rel.size else 0.0, int(pairs.analytic.size), int(zero.sum()),
                       float(resid.max()) if resid.size else 0.0, pairs.rounding_bound())


def _data(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def check_cls(rng) -> GradientPairs:
    f_m = MLP(10, HIDDEN, 6, rng, name="f_m")
    f_c = Linear(6, 4, rng, name="f_c")
    x = _data(rng, BATCH, 10)
    y = rng.integers(0, 4, BATCH)
    return gradient_pairs(lambda: loss_cls(f_c(f_m(x)), y), f_m.parameters() + f_c.parameters())


def check_center(rng) -> GradientPairs:
    f_m = MLP(10, HIDDEN, 6, rng, name="f_m")
    centers = Tensor(rng.standard_normal((4, 6)), requires_grad=True, name="centers")
    x = _data(rng, BATCH, 10)
    y = rng.integers(0, 4, BATCH)
    return gradient_pairs(lambda: loss_center(f_m(x), centers, y), f_m.parameters() + [centers])


def check_sp(rng, metric: str) -> GradientPairs:
    f_m = MLP(10, HIDDEN, 6, rng, name="f_m")
    x = rng.standard_normal((BATCH, 10))
    proto = rng.standard_normal((BATCH, 10))
    orig = structure_distances(x, proto, metric)
    return gradient_pairs(lambda: loss_sp(f_m(Tensor(x)), f_m(Tensor(proto)), orig, metric), f_m.parameters())


def _gan_parts(rng, d_feat=6, d_a=4, d_z=3):
    G = MLP(d_z + d_a, HIDDEN, d_feat, rng, name="G")
    D = MLP(d_feat + d_a + d_feat, HIDDEN, 1, rng, name="D")
    real = _data(rng, BATCH, d_feat)
    a = _data(rng, BATCH, d_a)
    proto = _data(rng, BATCH, d_feat)
    z = rng.standard_normal((BATCH, d_z))
    alpha = rng.uniform(size=BATCH)
    return G, D, real, a, proto, z, alpha


def check_mwgan_critic(rng) -> GradientPairs:
    G, D, real, a, proto, z, alpha = _gan_parts(rng)
    return gradient_pairs(lambda: loss_mwgan(D, G, real, a, proto, z, alpha, 10.0).critic_loss, D.parameters())


def check_mwgan_generator(rng) -> GradientPairs:
    G, D, real, a, proto, z, alpha = _gan_parts(rng)
    return gradient_pairs(lambda: loss_mwgan(D, G, real, a, proto, z, alpha, 10.0).generator_loss, G.parameters())


def _rwgan_parts(rng, d_m=5, d_v=7, d_a=4):
    G2 = MLP(d_m + d_a, HIDDEN, d_v, rng, name="G2")
    D2 = MLP(d_v + d_a + d_v, HIDDEN, 1, rng, name="D2")
    real, src, a, proto = (_data(rng, BATCH, d) for d in (d_v, d_m, d_a, d_v))
    return G2, D2, real, src, a, proto, rng.uniform(size=BATCH)


def check_rwgan_critic(rng) -> GradientPairs:
    G2, D2, real, src, a, proto, alpha = _rwgan_parts(rng)
    return gradient_pairs(lambda: loss_rwgan(D2, G2, real, src, a, proto, alpha, 10.0).critic_loss, D2.parameters())


def check_rwgan_generator(rng) -> GradientPairs:
    G2, D2, real, src, a, proto, alpha = _rwgan_parts(rng)
    return gradient_pairs(lambda: loss_rwgan(D2, G2, real, src, a, proto, alpha, 10.0).generator_loss,
                          G2.parameters())


def check_vae(rng) -> GradientPairs:
    d_m, d_v, d_a, d_z = 5, 7, 4, 3
    E = Encoder(d_m + d_a, HIDDEN, d_z, rng)
    G = MLP(d_z + d_a, HIDDEN, d_m, rng, name="G")
    G2 = MLP(d_m + d_a, HIDDEN, d_v, rng, name="G2")
    x_m, x, a = (_data(rng, BATCH, d) for d in (d_m, d_v, d_a))
    eps = rng.standard_normal((BATCH, d_z))
    params = E.parameters() + G.parameters() + G2.parameters()
    return gradient_pairs(lambda: vae_forward(E, G, G2, x_m, x, a, eps).total, params)


def check_penalty_only(rng) -> GradientPairs:
    """Parameter gradient of the gradient-penalty term alone (double backprop)."""
    d_feat, d_a = int(rng.integers(2, 9)), int(rng.integers(1, 6))
    D = MLP(d_feat + d_a, HIDDEN, 1, rng, name="D")
    real, fake, a = (_data(rng, BATCH, d) for d in (d_feat, d_feat, d_a))
    alpha = rng.uniform(size=BATCH)
    return gradient_pairs(lambda: gradient_penalty(critic_fn(D, a, None), real, fake, alpha, 10.0), D.parameters())


def objective_checks() -> list[tuple[str, Callable]]:
    checks = [("classification", check_cls), ("center", check_center)]
    checks += [(f"structure-{m}", lambda rng, m=m: check_sp(rng, m)) for m in METRICS]
    checks += [("mwgan-critic+gp", check_mwgan_critic), ("mwgan-generator", check_mwgan_generator),
               ("rwgan-critic+gp", check_rwgan_critic), ("rwgan-generator", check_rwgan_generator),
               ("vae", check_vae)]
    return checks


def objective_suite(seed: int = 0) -> Iterator[CheckResult]:
    with precision("float64"):
        for i, (name, fn) in enumerate(objective_checks()):
            yield summarize(name, fn(np.random.default_rng([seed, i])))


def penalty_suite(seed: int = 0, n: int = 20) -> Iterator[CheckResult]:
    with precision("float64"):
        for k in range(n):
            yield summarize(f"penalty-double-backprop-{k}", check_penalty_only(np.random.default_rng([seed, 1000 + k])))


def gradient_suite(seed: int = 0, n_penalty: int = 20) -> Iterator[CheckResult]:
    yield from objective_suite(seed)
    yield from penalty_suite(seed, n_penalty)
