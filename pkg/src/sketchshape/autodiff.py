"""Dense 2-D tensors with reverse-mode differentiation.

Everything trainable in this package flows through the ops in this module,
so every gradient can be validated against central finite differences.
All arithmetic is float64; any NaN/Inf produced by an op raises immediately
instead of propagating.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor2",
    "Parameter",
    "GradTape",
    "NumericsError",
    "ShapeMismatch",
    "TapeError",
    "tensor",
    "leaf_of",
    "matmul",
    "transpose",
    "add",
    "sub",
    "add_rowvec",
    "scale",
    "relu",
    "sigmoid",
    "softmax_rows",
    "layer_norm",
    "mse",
    "l1",
    "make_op",
]


class NumericsError(ArithmeticError):
    """A public operation produced a non-finite value."""


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, nested tapes, loss not a scalar."""


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{op} produced non-finite values")


class Tensor2:
    """Immutable row-major float64 matrix, optionally a node in the active tape."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, parents=(), backward=None):
        if data.ndim != 2:
            raise ShapeMismatch(f"Tensor2 requires a 2-D array, got shape {data.shape}")
        data.setflags(write=False)
        self.data = data
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __matmul__(self, other: "Tensor2") -> "Tensor2":
        return matmul(self, other)

    def __add__(self, other: "Tensor2") -> "Tensor2":
        return add(self, other)

    def __sub__(self, other: "Tensor2") -> "Tensor2":
        return sub(self, other)

    def __mul__(self, c: float) -> "Tensor2":
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.data.shape})"


class Parameter:
    """Named trainable matrix. `grad` is filled by GradTape.backward."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        value = np.array(value, dtype=np.float64)
        if value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise ShapeMismatch(f"parameter {name!r} must be 2-D, got {value.shape}")
        _check_finite(f"parameter {name!r}", value)
        self.name = name
        self.value = value
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


_ACTIVE: "GradTape | None" = None


class GradTape:
    """Ordered record of differentiable ops for one forward/backward cycle.

    Single-threaded: at most one tape may be active at a time. After
    `backward` has run, the tape is spent; a second backward raises.
    """

    def __init__(self):
        self._nodes: list[Tensor2] = []
        self._watched: list[tuple[Parameter, Tensor2]] = []
        self._leaf_by_param: dict[int, Tensor2] = {}
        self._spent = False

    def __enter__(self) -> "GradTape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise TapeError("a GradTape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    def watch(self, param: Parameter) -> Tensor2:
        """Return the tape's leaf tensor for `param`, registering it for gradients."""
        leaf = self._leaf_by_param.get(id(param))
        if leaf is None:
            leaf = Tensor2(param.value.view())
            self._leaf_by_param[id(param)] = leaf
            self._watched.append((param, leaf))
        return leaf

    def backward(self, loss: Tensor2) -> None:
        if self._spent:
            raise TapeError("backward already ran on this tape; record a new forward pass")
        if loss.shape != (1, 1):
            raise TapeError(f"loss must be 1x1, got {loss.shape}")
        self._spent = True
        loss.grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for param, leaf in self._watched:
            param.grad = leaf.grad if leaf.grad is not None else np.zeros_like(param.value)


def _accumulate(t: Tensor2, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _node(op: str, value: np.ndarray, parents: tuple, backward) -> Tensor2:
    _check_finite(op, value)
    if _ACTIVE is None:
        return Tensor2(value)
    out = Tensor2(value, parents=parents, backward=backward)
    _ACTIVE._nodes.append(out)
    return out


def make_op(op: str, value: np.ndarray, parents: tuple[Tensor2, ...], backward) -> Tensor2:
    """Create a custom differentiable node.

    `backward(g)` must push contributions into the parents via their `.grad`
    using the same accumulate-by-addition convention as the built-in ops.
    Escape hatch for fused ops defined outside this module.
    """
    return _node(op, value, parents, backward)


def leaf_of(param: Parameter, tape: "GradTape | None") -> Tensor2:
    """Tensor view of a parameter: watched when a tape is given, constant otherwise."""
    if tape is not None:
        return tape.watch(param)
    return Tensor2(param.value.view())


def tensor(data) -> Tensor2:
    """Constant (non-trainable) tensor from array-like data; 1-D becomes a row."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    _check_finite("tensor", arr)
    return Tensor2(arr)


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.cols != b.rows:
        raise ShapeMismatch(f"matmul: {a.shape} x {b.shape}")
    value = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node("matmul", value, (a, b), backward)


def transpose(x: Tensor2) -> Tensor2:
    value = np.ascontiguousarray(x.data.T)

    def backward(g):
        _accumulate(x, g.T)

    return _node("transpose", value, (x,), backward)


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    value = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node("add", value, (a, b), backward)


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
    value = a.data - b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node("sub", value, (a, b), backward)


def add_rowvec(x: Tensor2, r: Tensor2) -> Tensor2:
    """Add a 1xC row vector to every row of an NxC matrix."""
    if r.rows != 1 or r.cols != x.cols:
        raise ShapeMismatch(f"add_rowvec: {x.shape} + {r.shape}")
    value = x.data + r.data

    def backward(g):
        _accumulate(x, g)
        _accumulate(r, g.sum(axis=0, keepdims=True))

    return _node("add_rowvec", value, (x, r), backward)


def scale(x: Tensor2, c: float) -> Tensor2:
    c = float(c)
    value = x.data * c

    def backward(g):
        _accumulate(x, g * c)

    return _node("scale", value, (x,), backward)


def relu(x: Tensor2) -> Tensor2:
    value = np.maximum(x.data, 0.0)

    def backward(g):
        _accumulate(x, g * (x.data > 0.0))

    return _node("relu", value, (x,), backward)


def sigmoid(x: Tensor2) -> Tensor2:
    # Split by sign so exp never overflows.
    value = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                     np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g):
        _accumulate(x, g * value * (1.0 - value))

    return _node("sigmoid", value, (x,), backward)


def softmax_rows(x: Tensor2) -> Tensor2:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * value).sum(axis=1, keepdims=True)
        _accumulate(x, value * (g - dot))

    return _node("softmax_rows", value, (x,), backward)


def layer_norm(x: Tensor2, gain: Tensor2, bias: Tensor2, eps: float = 1e-5) -> Tensor2:
    """Per-row standardization followed by a columnwise affine map."""
    if gain.rows != 1 or gain.cols != x.cols or bias.rows != 1 or bias.cols != x.cols:
        raise ShapeMismatch(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    value = xhat * gain.data + bias.data

    def backward(g):
        _accumulate(gain, (g * xhat).sum(axis=0, keepdims=True))
        _accumulate(bias, g.sum(axis=0, keepdims=True))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        _accumulate(x, term * inv_std)

    return _node("layer_norm", value, (x, gain, bias), backward)


def mse(a: Tensor2, b: Tensor2) -> Tensor2:
    """Mean of squared elementwise differences, as a 1x1 tensor."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"mse: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    value = np.array([[np.mean(diff * diff)]])
    n = diff.size

    def backward(g):
        coeff = 2.0 * g[0, 0] / n
        _accumulate(a, coeff * diff)
        _accumulate(b, -coeff * diff)

    return _node("mse", value, (a, b), backward)


def l1(a: Tensor2, b: Tensor2) -> Tensor2:
    """Mean of absolute elementwise differences, as a 1x1 tensor."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"l1: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    value = np.array([[np.mean(np.abs(diff))]])
    n = diff.size

    def backward(g):
        coeff = g[0, 0] / n
        s = np.sign(diff)
        _accumulate(a, coeff * s)
        _accumulate(b, -coeff * s)

    return _node("l1", value, (a, b), backward)
