"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every node is a :class:`Tensor`. Operations record their parents and a
backward closure; :func:`grad` walks the recorded graph once in reverse
topological order.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when a gradient request violates the graph contract."""


class UnreachedParameterWarning(UserWarning):
    """A requested parameter does not influence the output; its gradient is zero."""


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A dense matrix node, optionally recording its gradient history."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_array(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def indicator_ste(a: Tensor, pass_mask: np.ndarray | None = None) -> Tensor:
    """Forward ``1[a >= 0]``; backward passes the upstream gradient through unchanged.

    ``pass_mask`` (same shape, 0/1) zeroes the pass-through where a feature is dead.
    """
    out = (a.data >= 0).astype(np.float64)
    keep = np.ones_like(out) if pass_mask is None else _as_matrix(pass_mask)
    return _node(out, (a,), lambda g: (g * keep,), "indicator_ste")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array([[a.data.sum()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.data.size
    return _node(np.array([[a.data.mean()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0] / n),), "mean")


def log_softmax_array(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_array(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_array(logits))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy (nats) of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    logp = log_softmax_array(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g[0, 0] / n),)

    return _node(np.array([[loss]]), (logits,), backward, "softmax_xent")


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over all entries."""
    target = _as_matrix(target).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size

    def backward(g):
        return (diff * (2.0 * g[0, 0] / n),)

    return _node(np.array([[np.mean(diff * diff)]]), (pred,), backward, "mse")


def custom_scalar(inputs: Sequence[Tensor], value: float,
                  input_grads: Sequence[np.ndarray | None], op: str) -> Tensor:
    """Scalar node whose local gradients w.r.t. ``inputs`` are precomputed."""
    def backward(g):
        return tuple(None if d is None else d * g[0, 0] for d in input_grads)

    return _node(np.array([[value]]), tuple(inputs), backward, op)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Return d(output)/d(param) for each param.

    ``output`` must be 1x1. Parameters that do not reach the output get a zero
    gradient and trigger :class:`UnreachedParameterWarning`. The graph is not
    consumed; nodes keep no gradient state between calls.
    """
    params = list(params)
    if output.shape != (1, 1):
        raise GraphError(f"gradient needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
    if output.requires_grad:
        for node in reversed(_topological(output)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = []
    unreached = []
    for i, p in enumerate(params):
        g = grads.get(id(p))
        if g is None:
            unreached.append(i)
            g = np.zeros(p.shape)
        out.append(g)
    if unreached:
        warnings.warn(f"parameters {unreached} do not reach the output; zero gradient returned",
                      UnreachedParameterWarning, stacklevel=2)
    return out


def backward(output: Tensor, params: Iterable[Tensor]) -> None:
    """Like :func:`grad`, but stores each result in ``param.grad``."""
    params = list(params)
    for p, g in zip(params, grad(output, params)):
        p.grad = g
