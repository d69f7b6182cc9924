"""Affine layers and single-hidden-layer perceptrons."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, default_dtype, leaky_relu


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "linear"):
        # Glorot-uniform weights, zero bias
        bound = np.sqrt(6.0 / (n_in + n_out))
        dt = default_dtype()
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True,
                             name=f"{name}.weight", dtype=dt)
        self.bias = Tensor(np.zeros((1, n_out)), requires_grad=True, name=f"{name}.bias", dtype=dt)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """in -> hidden (leaky ReLU) -> out, no output activation."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 slope: float = 0.2, name: str = "mlp"):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        self.slope = slope
        self.hidden = Linear(n_in, n_hidden, rng, name=f"{name}.hidden")
        self.out = Linear(n_hidden, n_out, rng, name=f"{name}.out")

    def __call__(self, *xs: Tensor) -> Tensor:
        x = xs[0] if len(xs) == 1 else concat(xs, axis=1)
        return self.out(leaky_relu(self.hidden(x), self.slope))

    def parameters(self) -> list[Tensor]:
        return self.hidden.parameters() + self.out.parameters()


def named_parameters(*modules) -> dict[str, Tensor]:
    out = {}
    for m in modules:
        if m is None:
            continue
        for p in m.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
    return out
