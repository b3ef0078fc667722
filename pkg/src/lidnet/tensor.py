"""Dense tensors with reverse-mode differentiation.

Only the operations the language-ID model needs are implemented. Every op
records a closure that maps the output gradient to input gradients; the
graph is walked in reverse topological order by :meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

_dtype = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class InvalidMaskError(ValueError):
    """A masked reduction has no valid entries in some row."""


class ContractError(ValueError):
    """A precondition of an operation is violated."""


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype new tensors are created with.

    Training and inference run in float32; float64 exists for gradient checks.
    """
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Optional[BackwardFn] = None, op: str = ""):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"all dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Intermediate gradients are not retained, so calling this twice on the
        same graph adds exactly twice the gradient to each leaf.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named model tensor. Non-trainable parameters hold state such as running statistics."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward: BackwardFn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None, op=op)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def tanh_map(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu_map(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0), (x,), lambda g: (g * pos,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


# shape & reductions -------------------------------------------------------

def reshape(x: Tensor, shape: tuple) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def sum_(x: Tensor, axis=None) -> Tensor:
    src = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(x.data.sum(axis=axis), (x,), back, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / float(n))


# linear algebra -----------------------------------------------------------

def _ordered_sum(terms: Callable[[int], np.ndarray], n: int) -> np.ndarray:
    # left-to-right accumulation; unlike BLAS or pairwise reductions the
    # rounding of each output does not depend on how many rows sit beside it
    acc = terms(0).copy()
    for i in range(1, n):
        acc += terms(i)
    return acc


def matmul(x: Tensor, w: Tensor, ordered: bool = False) -> Tensor:
    """``x[..., K] @ w[K, M]`` with the weight shared across leading axes.

    ``ordered=True`` accumulates over K in a fixed order so every output row
    is bit-identical however many other rows are in the batch.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"cannot multiply {x.shape} by {w.shape}")

    def back(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, w.shape[1])
        return gx, gw

    if ordered:
        out = _ordered_sum(lambda k: x.data[..., k, None] * w.data[k], w.shape[0])
    else:
        out = x.data @ w.data
    return _make(out, (x, w), back, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor, ordered: bool = False) -> Tensor:
    """Per-frame ``x @ w + b``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"affine shapes disagree: x {x.shape}, W {w.shape}, b {b.shape}")
    return add(matmul(x, w, ordered), b)


# masked softmax & pooling -------------------------------------------------

def _valid_mask(mask, shape) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise DimensionError(f"mask shape {m.shape} does not match {shape}")
    if not m.any(axis=-1).all():
        raise InvalidMaskError("every row needs at least one valid entry")
    return m


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked entries get exactly zero weight.

    The normalizer is summed in index order, so appending masked entries
    leaves the unmasked outputs bit-identical.
    """
    m = _valid_mask(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / _ordered_sum(lambda t: e[..., t], e.shape[-1])[..., None]

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), back, "softmax")


def weighted_sum(w: Tensor, x: Tensor) -> Tensor:
    """``out[..., c] = sum_t w[..., t] * x[..., t, c]``, accumulated in t order."""
    if x.shape[:-1] != w.shape:
        raise DimensionError(f"weights {w.shape} do not match frames {x.shape}")

    def back(g):
        gw = np.einsum("...c,...tc->...t", g, x.data)
        gx = w.data[..., None] * g[..., None, :]
        return gw, gx

    out = _ordered_sum(lambda t: w.data[..., t, None] * x.data[..., t, :], w.shape[-1])
    return _make(out, (w, x), back, "weighted_sum")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]``, evaluated via log-sum-exp.

    ``logits`` is ``[K]`` with an integer label or ``[N, K]`` with N labels.
    """
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = z.shape
    if lab.shape != (n,):
        raise DimensionError(f"{lab.shape[0]} labels for {n} rows of logits")
    if np.any(lab < 0) or np.any(lab >= k):
        raise ContractError(f"labels must lie in [0, {k}), got {lab.tolist()}")
    shifted = z.astype(np.float64) - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - shifted[rows, lab]).mean()
    probs = np.exp(shifted - lse[:, None])

    def back(g):
        d = probs.copy()
        d[rows, lab] -= 1.0
        d *= g / n
        return (d.reshape(logits.shape).astype(logits.data.dtype),)

    return _make(loss, (logits,), back, "cross_entropy")


# utilities ----------------------------------------------------------------

def backward(loss: Tensor, params: Iterable[Parameter] = ()) -> dict:
    """Run backprop from ``loss`` and return ``{name: grad}`` for ``params``.

    Parameters the loss does not reach get an all-zero gradient.
    """
    loss.backward()
    out = {}
    for p in params:
        if p.trainable:
            out[p.name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


def relu_margin(root: Tensor) -> float:
    """Smallest |pre-activation| over every ReLU in the graph behind ``root``."""
    margin = math.inf
    for node in _topological(root):
        if node.op == "relu" and node._parents:
            margin = min(margin, float(np.abs(node._parents[0].data).min()))
    return margin


def relu_pattern(root: Tensor) -> np.ndarray:
    """Flattened on/off state of every ReLU unit behind ``root``."""
    parts = [(node._parents[0].data > 0).reshape(-1) for node in _topological(root)
             if node.op == "relu" and node._parents]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def crosses_kink(f: Callable[[], Tensor], params: Sequence[Tensor], radius: float) -> bool:
    """True if moving any single coordinate by +-radius flips some ReLU.

    This is the parameter-space version of ``relu_margin``: batch norm can
    amplify a small step, so a large activation margin alone does not
    guarantee that finite differences stay on one linear piece.
    """
    base = relu_pattern(f())
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            for step in (radius, -radius):
                flat[i] = orig + step
                flipped = not np.array_equal(relu_pattern(f()), base)
                flat[i] = orig
                if flipped:
                    return True
    return False


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-3,
               floor: float = 1.0) -> float:
    """Worst per-coordinate relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current parameter values on every call.
    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps coordinates whose true gradient is ~0 from dominating.
    Differences of ``f`` are taken in float64 regardless of the active dtype.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.float64(f().data))
            flat[i] = orig - eps
            lo = float(np.float64(f().data))
            flat[i] = orig
            # the perturbation actually applied after rounding to the param dtype
            step = float(np.float64(p.data.dtype.type(orig + eps)) - np.float64(p.data.dtype.type(orig - eps)))
            num = (hi - lo) / step
            err = abs(af[i] - num) / max(abs(af[i]), abs(num), floor)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
