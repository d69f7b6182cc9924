"""Dense 2-D tensors with a recording tape for reverse-mode differentiation.

Every backward rule is written in terms of the same recorded primitives, so a
gradient computed with ``create_graph=True`` is itself a taped value and can be
differentiated again (needed for the WGAN gradient penalty).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """An operation produced NaN or Inf."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


_DTYPES = {"float32": np.float32, "float64": np.float64}
_state = {"dtype": np.float32, "tapes": [], "recording": True}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new tensors ("float32" or "float64")."""
    if name not in _DTYPES:
        raise ContractError(f"unknown precision {name!r}")
    old = _state["dtype"]
    _state["dtype"] = _DTYPES[name]
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_record():
    """Run operations without appending them to any tape."""
    old = _state["recording"]
    _state["recording"] = False
    try:
        yield
    finally:
        _state["recording"] = old


def _active_tape() -> "Tape | None":
    if not _state["recording"] or not _state["tapes"]:
        return None
    return _state["tapes"][-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce_mean(self, axis)


class Node:
    __slots__ = ("op", "inputs", "output", "forward", "backward")

    def __init__(self, op, inputs, output, forward, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.backward = backward


class Tape:
    """Ordered record of operations; operands always precede their consumers.

    Use as a context manager. Operations touching a tensor that requires a
    gradient are recorded while the tape is active.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.dtype = None

    def __enter__(self) -> "Tape":
        _state["tapes"].append(self)
        return self

    def __exit__(self, *exc):
        _state["tapes"].remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node: Node) -> None:
        dt = node.output.data.dtype
        if self.dtype is None:
            self.dtype = dt
        elif dt != self.dtype:
            raise ContractError(f"tape holds {self.dtype} values; cannot record {dt} op {node.op!r}")
        self.nodes.append(node)

    def gradient(self, output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
        """Gradients of a 1x1 ``output`` with respect to each tensor in ``wrt``.

        Tensors unreachable from ``output`` get zeros. With ``create_graph`` the
        backward computation is itself recorded on this tape.
        """
        if output.shape != (1, 1):
            raise ContractError(f"gradient needs a scalar output, got shape {output.shape}")
        grads: dict[int, Tensor] = {id(output): Tensor(np.ones((1, 1), dtype=output.dtype), dtype=output.dtype)}
        nodes = self.nodes[: len(self.nodes)]
        ctx = _use_tape(self) if create_graph else no_record()
        with ctx:
            for node in reversed(nodes):
                g = grads.get(id(node.output))
                if g is None:
                    continue
                in_grads = node.backward(g, *node.inputs, node.output)
                for inp, gi in zip(node.inputs, in_grads):
                    if gi is None or not inp.requires_grad:
                        continue
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else add(prev, gi)
        out = []
        for w in wrt:
            g = grads.get(id(w))
            if g is None:
                g = Tensor(np.zeros(w.shape, dtype=w.dtype), dtype=w.dtype)
            elif not create_graph:
                g = g.detach()
            out.append(g)
        return out

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded forward rule from current input values."""
        values: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [values.get(id(t), t.data) for t in node.inputs]
            val = node.forward(*args)
            values[id(node.output)] = val
            out.append(val)
        return out


@contextlib.contextmanager
def _use_tape(tape: Tape):
    old = _state["recording"]
    _state["recording"] = True
    _state["tapes"].append(tape)
    try:
        yield
    finally:
        _state["tapes"].pop()
        _state["recording"] = old


def backward(tape: Tape, output: Tensor, params: Sequence[Tensor]) -> dict[int, np.ndarray]:
    """Plain first-order gradients keyed by ``id(param)``."""
    grads = tape.gradient(output, params)
    return {id(p): g.data for p, g in zip(params, grads)}


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _apply(op: str, forward: Callable, backward: Callable, *inputs: Tensor) -> Tensor:
    dt = inputs[0].data.dtype
    for t in inputs[1:]:
        if t.data.dtype != dt:
            raise ContractError(f"{op}: mixed precision operands {dt} and {t.data.dtype}")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = forward(*(t.data for t in inputs))
    if not np.isfinite(out).all():
        raise NumericError(f"{op} produced non-finite values")
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    res = Tensor(out, requires_grad=needs, dtype=dt)
    if needs:
        tape.record(Node(op, inputs, res, forward, backward))
    return res


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def unbroadcast(g: Tensor, shape: tuple[int, int]) -> Tensor:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return reduce_sum(g)
    if shape[0] == 1 and g.shape[0] != 1:
        g = reduce_sum(g, axis=0)
    if shape[1] == 1 and g.shape[1] != 1:
        g = reduce_sum(g, axis=1)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return _apply("add", np.add, lambda g, a, b, out: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), a, b)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return _apply(
        "sub", np.subtract,
        lambda g, a, b, out: (unbroadcast(g, a.shape), unbroadcast(scale(g, -1.0), b.shape)),
        a, b,
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return _apply(
        "mul", np.multiply,
        lambda g, a, b, out: (unbroadcast(mul(g, b), a.shape), unbroadcast(mul(g, a), b.shape)),
        a, b,
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)

    def bwd(g, a, b, out):
        ga = div(g, b)
        gb = scale(mul(ga, out), -1.0)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _apply("div", np.divide, bwd, a, b)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _apply("scale", lambda v: v * v.dtype.type(c), lambda g, x, out: (scale(g, c),), x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return _apply("matmul", np.matmul, lambda g, a, b, out: (matmul(g, transpose(b)), matmul(transpose(a), g)), a, b)


def transpose(x: Tensor) -> Tensor:
    return _apply("transpose", lambda v: np.ascontiguousarray(v.T), lambda g, x, out: (transpose(g),), x)


# -- reductions and reshaping ----------------------------------------------------

def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis not in (None, 0, 1):
        raise ContractError(f"sum axis must be None, 0 or 1, got {axis}")
    if axis is None:
        fwd = lambda v: np.sum(v, dtype=v.dtype).reshape(1, 1)
    else:
        fwd = lambda v: np.sum(v, axis=axis, keepdims=True)
    return _apply("sum", fwd, lambda g, x, out: (broadcast_to(g, x.shape),), x)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


def broadcast_to(x: Tensor, shape: tuple[int, int]) -> Tensor:
    shape = tuple(shape)
    try:
        np.broadcast_shapes(x.shape, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: {x.shape} cannot broadcast to {shape}") from None
    return _apply(
        "broadcast_to",
        lambda v: np.ascontiguousarray(np.broadcast_to(v, shape)),
        lambda g, x, out: (unbroadcast(g, x.shape),),
        x,
    )


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along columns (axis=1) or rows (axis=0)."""
    parts = list(parts)
    other = 1 - axis
    for p in parts[1:]:
        if p.shape[other] != parts[0].shape[other]:
            raise DimensionError(
                f"concat axis={axis}: shapes {parts[0].shape} and {p.shape} disagree on axis {other}"
            )
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bwd(g, *args):
        return tuple(slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1])) for i in range(len(parts)))

    return _apply("concat", lambda *vs: np.concatenate(vs, axis=axis), bwd, *parts)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = x.shape[axis]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of shape {x.shape}")

    def fwd(v):
        return np.ascontiguousarray(v[start:stop] if axis == 0 else v[:, start:stop])

    def bwd(g, x, out):
        pieces = []
        zshape = list(x.shape)
        if start > 0:
            zshape[axis] = start
            pieces.append(Tensor(np.zeros(zshape, dtype=g.dtype), dtype=g.dtype))
        pieces.append(g)
        if stop < n:
            zshape[axis] = n - stop
            pieces.append(Tensor(np.zeros(zshape, dtype=g.dtype), dtype=g.dtype))
        return (concat(pieces, axis=axis) if len(pieces) > 1 else g,)

    return _apply("slice", fwd, bwd, x)


def row_l2_norm(x: Tensor) -> Tensor:
    """Euclidean norm of each row, shape (n, 1). The subgradient at 0 is 0."""
    def bwd(g, x, out):
        return (mul(x, div(g, maximum(out, _TINY))),)

    return _apply("row_l2_norm", lambda v: np.sqrt(np.sum(v * v, axis=1, keepdims=True)), bwd, x)


_TINY = 1e-30


def maximum(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor) for a constant floor."""
    def bwd(g, x, out):
        return (mul(g, _const(x.data > floor, g)),)

    return _apply("maximum", lambda v: np.maximum(v, v.dtype.type(floor)), bwd, x)


def _const(arr, like: Tensor) -> Tensor:
    return Tensor(np.asarray(arr, dtype=like.dtype), dtype=like.dtype)


# -- nonlinearities -----------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    def fwd(v):
        return np.where(v > 0, v, v * v.dtype.type(slope))

    def bwd(g, x, out):
        return (mul(g, _const(np.where(x.data > 0, 1.0, slope), g)),)

    return _apply("leaky_relu", fwd, bwd, x)


def sigmoid(x: Tensor) -> Tensor:
    def fwd(v):
        e = np.exp(-np.abs(v))
        return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype)

    return _apply("sigmoid", fwd, lambda g, x, out: (mul(g, mul(out, sub(1.0, out))),), x)


def exp(x: Tensor) -> Tensor:
    return _apply("exp", np.exp, lambda g, x, out: (mul(g, out),), x)


def log(x: Tensor) -> Tensor:
    def fwd(v):
        if (v <= 0).any():
            raise NumericError("log of a non-positive value")
        return np.log(v)

    return _apply("log", fwd, lambda g, x, out: (div(g, x),), x)


def absolute(x: Tensor) -> Tensor:
    return _apply("abs", np.abs, lambda g, x, out: (mul(g, _const(np.sign(x.data), g)),), x)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def constant(arr, dtype=None) -> Tensor:
    return Tensor(arr, dtype=dtype)


def parameter(arr, name: str | None = None) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)
