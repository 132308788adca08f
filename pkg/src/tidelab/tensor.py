"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  :func:`backprop` walks a tape backwards
from a scalar loss.

    >>> w = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = w * w
    >>> backprop(tape, loss)[w]
    array(6.)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ParameterError(ValueError):
    """A scalar hyper-parameter is out of range."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as operations execute, so inputs always precede the
    node that consumes them.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)


_TAPES: list[Tape] = []


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs and _TAPES:
        _TAPES[-1].nodes.append(Node(out, inputs, backward, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _record("div", out, (a, b), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def total(x) -> Tensor:
    """Sum of every element, as a 0-d tensor."""
    x = as_tensor(x)
    shape = x.shape
    return _record("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.data.size
    return _record("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


# --------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _record("reshape", out, (x,), lambda g: (g.reshape(old),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _record("concat", out, ts, back)


def getitem(x, key) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = np.array(x.data[key])

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _record("getitem", out, (x,), back)


# --------------------------------------------------------------------------
# layers


def matmul(x, W) -> Tensor:
    x, W = as_tensor(x), as_tensor(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"matmul: x{x.shape} @ W{W.shape} inner dimensions disagree")
    xd, Wd = x.data, W.data
    return _record("matmul", xd @ Wd, (x, W), lambda g: (g @ Wd.T, xd.T @ g))


def affine(x, W, b) -> Tensor:
    """``x @ W + b`` for x of shape (batch, in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"affine: bias {b.shape} does not match weight {W.shape}")
    xd, Wd = x.data, W.data

    def back(g):
        return g @ Wd.T, xd.T @ g, g.sum(axis=0)

    return _record("affine", xd @ Wd + b.data, (x, W, b), back)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Per-row standardisation over the last axis (population variance)."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    xd = np.ascontiguousarray(x.data)
    gd = np.ascontiguousarray(gain.data)
    y, xhat, inv = _kernels.layer_norm_fwd(xd, gd, np.ascontiguousarray(bias.data), eps)
    return _record(
        "layer_norm",
        y,
        (x, gain, bias),
        lambda g: _kernels.layer_norm_bwd(np.ascontiguousarray(g), xhat, inv, gd),
    )


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity outside training."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        gp = (2.0 / n) * float(g) * diff
        return gp, -gp

    return _record("mse_loss", np.array((diff * diff).sum() / n), (pred, target), back)


# --------------------------------------------------------------------------
# backward pass


def backprop(tape: Tape, loss: Tensor, params: Mapping[str, Tensor] | None = None):
    """Reverse-mode gradients of ``loss`` over everything recorded on ``tape``.

    With ``params`` given, returns ``{name: grad}`` with zeros for parameters
    the loss does not depend on.  Otherwise returns ``{leaf_tensor: grad}``
    for every gradient-requiring leaf reached.
    """
    if loss.data.size != 1:
        raise ContractError(f"backprop needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    keep: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        produced.add(id(node.out))
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            k = id(inp)
            keep[k] = inp
            if k in grads:
                grads[k] = grads[k] + gi
            else:
                grads[k] = np.asarray(gi, dtype=np.float64).reshape(inp.shape)
    leaves = {keep[k]: g for k, g in grads.items() if k not in produced}
    if params is None:
        return leaves
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else g
    return out


def value_and_grad(fn: Callable[[], Tensor], params: Mapping[str, Tensor]):
    """Run ``fn`` under a fresh tape; return (loss value, {name: grad})."""
    with Tape() as tape:
        loss = fn()
    return float(loss.data), backprop(tape, loss, params)
