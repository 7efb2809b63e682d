"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op computes its numpy result immediately and
records a closure mapping the output gradient to parent gradients.
``backward`` walks the graph once in reverse topological order. Leaf tensors
created with ``requires_grad=True`` accumulate into ``.grad`` across calls;
callers zero them between optimizer steps.

Everything is float64. Ops are pure functions of their inputs with fixed
reduction orders, so results are bit-reproducible; there is no hidden RNG.
Inside a ``no_grad()`` block ops skip graph construction entirely.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

# Added to masked attention scores instead of literal -inf, which would turn
# into NaN on the 0*inf backward path.
MASK_FILL = -1e9


class Tensor:
    """A numpy array plus the graph edges needed for backpropagation."""

    __slots__ = ("data", "grad", "parents", "grad_fn", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _GradMode:
    __slots__ = ("enabled",)

    def __init__(self) -> None:
        self.enabled = True


_mode = _GradMode()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction; ops return plain value tensors."""
    prev = _mode.enabled
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


def grad_enabled() -> bool:
    return _mode.enabled


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.grad_fn is not None


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if _mode.enabled and any(_tracked(p) for p in parents):
        out.parents = parents
        out.grad_fn = grad_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Repeated calls without zeroing accumulate; callers zero grads first.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    # Iterative DFS postorder: producers before consumers.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.grad_fn is not None and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        fn = node.grad_fn
        if fn is None or node.grad is None:
            continue
        grads = fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not _tracked(parent):
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad += g
        if not node.requires_grad:
            node.grad = None  # free interior buffers as the walk proceeds


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def grad_fn(og):
        ga = _unbroadcast(og, ash)
        gb = _unbroadcast(og, bsh)
        if gb is ga:
            gb = gb.copy()  # never hand the same buffer to two parents
        return ga, gb

    return _node(data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    ash, bsh = a.data.shape, b.data.shape

    def grad_fn(og):
        return _unbroadcast(og * b.data, ash), _unbroadcast(og * a.data, bsh)

    return _node(data, (a, b), grad_fn)


def scale_add(x: Tensor, factor: float, shift: Optional[np.ndarray] = None) -> Tensor:
    """``x * factor + shift`` with a constant scalar factor and constant shift."""
    data = x.data * factor
    if shift is not None:
        data = data + shift

    def grad_fn(og):
        return (og * factor,)

    return _node(data, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def grad_fn(og):
        return (og * (x.data > 0.0),)

    return _node(data, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    xsh = x.data.shape

    def grad_fn(og):
        return (og.reshape(xsh),)

    return _node(data, (x,), grad_fn)


def swap_last2(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise DimensionError(f"swap_last2 needs rank >= 2, got shape {x.data.shape}")
    data = x.data.swapaxes(-1, -2)

    def grad_fn(og):
        return (og.swapaxes(-1, -2),)

    return _node(data, (x,), grad_fn)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B, T, d] -> [B, heads, T, d/heads]."""
    if x.data.ndim != 3:
        raise DimensionError(f"split_heads needs [B, T, d], got shape {x.data.shape}")
    b, t, d = x.data.shape
    if d % heads != 0:
        raise DimensionError(f"split_heads: width {d} not divisible by {heads} heads")
    data = np.ascontiguousarray(x.data.reshape(b, t, heads, d // heads).swapaxes(1, 2))

    def grad_fn(og):
        return (og.swapaxes(1, 2).reshape(b, t, d),)

    return _node(data, (x,), grad_fn)


def merge_heads(x: Tensor) -> Tensor:
    """[B, heads, T, dk] -> [B, T, heads*dk]; inverse of split_heads."""
    if x.data.ndim != 4:
        raise DimensionError(f"merge_heads needs [B, h, T, dk], got shape {x.data.shape}")
    b, h, t, dk = x.data.shape
    data = x.data.swapaxes(1, 2).reshape(b, t, h * dk)

    def grad_fn(og):
        return (np.ascontiguousarray(og.reshape(b, t, h, dk).swapaxes(1, 2)),)

    return _node(data, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())
    xsh = x.data.shape

    def grad_fn(og):
        return (np.broadcast_to(og, xsh).copy(),)

    return _node(data, (x,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and network primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")
    data = ad @ bd

    def grad_fn(og):
        ga = _unbroadcast(og @ bd.swapaxes(-1, -2), ad.shape)
        if bd.ndim == 2 and ad.ndim > 2:
            # common linear-layer case: fold the batch dims
            gb = ad.reshape(-1, ad.shape[-1]).T @ og.reshape(-1, og.shape[-1])
        else:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ og, bd.shape)
        return ga, gb

    return _node(data, (a, b), grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    data = table.data[ids]
    width = table.data.shape[-1]
    vocab = table.data.shape[0]

    def grad_fn(og):
        # one-hot matmul instead of np.add.at: same result, far faster
        flat_ids = ids.reshape(-1)
        onehot = np.zeros((flat_ids.size, vocab))
        onehot[np.arange(flat_ids.size), flat_ids] = 1.0
        return (onehot.T @ og.reshape(-1, width),)

    return _node(data, (table,), grad_fn)


def softmax(x: Tensor, shift: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    ``shift`` is an optional constant (e.g. an additive attention mask) folded
    into the logits; its gradient is not propagated.
    """
    z = x.data + shift if shift is not None else x.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(og):
        return (s * (og - (og * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis (population variance)."""
    xd = x.data
    if xd.ndim == 0 or xd.shape[-1] == 0:
        raise DimensionError(f"layer_norm: empty last dimension in shape {xd.shape}")
    d = xd.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.data.shape} / beta {beta.data.shape} do not match width {d}"
        )
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def grad_fn(og):
        reduce_axes = tuple(range(og.ndim - 1))
        dgamma = (og * xhat).sum(axis=reduce_axes)
        dbeta = og.sum(axis=reduce_axes)
        dxhat = og * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _node(data, (x, gamma, beta), grad_fn)


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None
) -> Tensor:
    """softmax(q k^T / sqrt(dk) + mask) v over the last two axes.

    ``mask`` is a boolean array broadcastable to the score shape [.., Tq, Tk];
    True marks positions the query must not attend to.
    """
    dk = q.data.shape[-1]
    if k.data.shape[-1] != dk:
        raise DimensionError(f"attention: key width {k.data.shape} does not match query {q.data.shape}")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise DimensionError(f"attention: key count {k.data.shape} does not match values {v.data.shape}")
    # scaling the (smaller) query tensor beats scaling the score matrix
    scores = matmul(scale_add(q, 1.0 / math.sqrt(dk)), swap_last2(k))
    shift = None
    if mask is not None:
        shift = np.where(mask, MASK_FILL, 0.0)
    weights = softmax(scores, shift)
    return matmul(weights, v)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != td.shape:
        raise DimensionError(f"mse: prediction {pred.data.shape} vs target {td.shape}")
    diff = pred.data - td
    n = diff.size
    data = np.asarray((diff * diff).sum() / n)
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)

    def grad_fn(og):
        g = (2.0 / n) * diff * og
        return (g, -g) if len(parents) == 2 else (g,)

    return _node(data, parents, grad_fn)


def masked_mse(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """MSE over the positions where ``valid`` is True.

    ``pred`` and ``target`` are [.., P, d]; ``valid`` is boolean [.., P] and
    weights whole feature rows. Padded rows contribute nothing to value or
    gradient.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise DimensionError(f"masked_mse: prediction {pred.data.shape} vs target {target.shape}")
    if valid.shape != pred.data.shape[:-1]:
        raise DimensionError(f"masked_mse: mask {valid.shape} vs rows {pred.data.shape[:-1]}")
    w = valid.astype(np.float64)[..., None]
    denom = float(w.sum()) * pred.data.shape[-1]
    if denom == 0:
        raise ContractError("masked_mse: no valid positions")
    diff = pred.data - target
    data = np.asarray(((diff * diff) * w).sum() / denom)

    def grad_fn(og):
        return ((2.0 / denom) * diff * w * og,)

    return _node(data, (pred,), grad_fn)
