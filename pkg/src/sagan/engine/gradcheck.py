"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, NumericError, Tape, Tensor, no_record


@dataclass
class GradientPairs:
    """Flattened taped and central-difference gradients of every parameter entry."""

    analytic: np.ndarray
    numeric: np.ndarray
    loss: float
    eps: float

    def relative_error(self) -> np.ndarray:
        return np.abs(self.analytic - self.numeric) / np.maximum(1e-12, np.abs(self.analytic) + np.abs(self.numeric))

    def rounding_bound(self, ulps: float = 16.0) -> float:
        """Largest difference quotient explainable by rounding in the loss value alone."""
        return ulps * float(np.spacing(abs(self.loss))) / self.eps


def gradient_pairs(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> GradientPairs:
    """``f`` takes no arguments and rebuilds a scalar loss from the current
    parameter values; it must be deterministic. Run it in float64."""
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    with Tape() as tape:
        loss = f()
    analytic = [g.data for g in tape.gradient(loss, params)]

    def value() -> float:
        with no_record():
            v = f().item()
        if not np.isfinite(v):
            raise NumericError("loss evaluated to a non-finite value during finite differencing")
        return v

    numeric = []
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            numeric.append((up - down) / (2 * eps))
    ga = np.concatenate([g.reshape(-1) for g in analytic]) if analytic else np.zeros(0)
    return GradientPairs(ga.astype(np.float64), np.asarray(numeric, dtype=np.float64), loss.item(), eps)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between taped and central-difference gradients."""
    err = gradient_pairs(f, params, eps).relative_error()
    return float(err.max()) if err.size else 0.0
