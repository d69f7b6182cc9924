"""Loss functions and the differentiable input-gradient operator."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tape,
    Tensor,
    _active_tape,
    _use_tape,
    exp,
    log,
    matmul,
    reduce_sum,
    row_l2_norm,
    sub,
)


def one_hot(labels, n_classes: int, dtype=None) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise IndexError(f"label {bad} outside [0, {n_classes})")
    m = np.zeros((labels.size, n_classes))
    m[np.arange(labels.size), labels] = 1.0
    return Tensor(m, dtype=dtype)


def gather_rows(table: Tensor, index) -> Tensor:
    """Rows ``table[index]`` as a differentiable one-hot product."""
    return matmul(one_hot(index, table.shape[0], dtype=table.dtype), table)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels).ravel()
    n, c = logits.shape
    if labels.size != n:
        raise DimensionError(f"softmax_cross_entropy: {n} logit rows but {labels.size} labels")
    picked = one_hot(labels, c, dtype=logits.dtype)
    # the row max is a constant shift: it cancels in value and gradient
    shift = Tensor(logits.data.max(axis=1, keepdims=True), dtype=logits.dtype)
    z = sub(logits, shift)
    lse = log(reduce_sum(exp(z), axis=1))
    correct = reduce_sum(z * picked, axis=1)
    return reduce_sum(lse - correct) * (1.0 / n)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a - b
    return reduce_sum(d * d) * (1.0 / d.data.size)


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over dimensions, averaged over rows."""
    if mu.shape != logvar.shape:
        raise DimensionError(f"kl_standard_normal: shapes {mu.shape} and {logvar.shape} differ")
    terms = mu * mu + exp(logvar) - logvar - 1.0
    return reduce_sum(terms) * (0.5 / mu.shape[0])


def input_gradient(net: Callable[[Tensor], Tensor], x: Tensor) -> Tensor:
    """Per-row gradient of a row-wise scalar ``net`` with respect to its input.

    The result is recorded on the active tape so a loss built from it can be
    differentiated with respect to the parameters of ``net``.
    """
    if not x.requires_grad:
        x = Tensor(x.data, requires_grad=True, dtype=x.dtype)
    tape = _active_tape()
    owned = tape is None
    if owned:
        tape = Tape()
    with _use_tape(tape):
        out = net(x)
        if out.shape != (x.shape[0], 1):
            raise ContractError(f"input_gradient: net must return one scalar per row, got {out.shape}")
        (g,) = tape.gradient(reduce_sum(out), [x], create_graph=not owned)
    return g


def gradient_norm_penalty(grad: Tensor) -> Tensor:
    """mean over rows of (||grad_row|| - 1)^2."""
    norm = row_l2_norm(grad)
    if not np.isfinite(norm.data).all():
        raise NumericError("gradient norm is not finite")
    d = norm - 1.0
    return reduce_sum(d * d) * (1.0 / grad.shape[0])
