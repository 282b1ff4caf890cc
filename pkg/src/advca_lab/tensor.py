"""Reverse-mode automatic differentiation over dense numpy arrays.

Values are stored as float32 by default; float64 inputs are kept as-is so
high-precision gradient checks can run the same code path. The operation
graph is rebuilt on every forward pass, which lets one training step run
several differently-scoped backward passes. Gradients accumulate
additively into ``grad`` until explicitly cleared.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

__all__ = [
    "Tensor",
    "Tape",
    "affine",
    "matmul",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "absolute",
    "reduce",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "concat",
    "gather_rows",
    "scatter_rows",
    "softmax_cross_entropy",
    "cross_entropy_rows",
    "squared_l2_distance",
    "backward",
]


class Tensor:
    """Dense array node in the autodiff graph.

    ``grad`` is a same-shape accumulator present iff ``requires_grad``; it
    materializes lazily (zero-filled) on first access. Backward always
    accumulates into leaves; an interior tensor records its gradient only
    if its buffer was touched beforehand. ``op`` names the producing
    operation ("leaf" for inputs and parameters).
    """

    __slots__ = ("data", "requires_grad", "_grad", "op", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), grad_fn=None):
        arr = np.asarray(data)
        if arr.dtype != np.float64 and arr.dtype != np.float32:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self.op = op
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def grad(self):
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self._grad is not None:
            self._grad[...] = 0.0

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars are wrapped as constants of matching dtype.
    def __add__(self, other):
        return add(self, _as_tensor(other, like=self))

    def __radd__(self, other):
        return add(_as_tensor(other, like=self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, like=self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, like=self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, like=self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division between tensors is not supported")
        return mul(self, _as_tensor(1.0 / other, like=self))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, like=self))

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Topologically ordered record of the operations reachable from a root.

    Execution (and hence topological) order: every node appears after all
    of its parents. ``backward`` walks the record exactly once in reverse.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, grad_fn, op) -> Tensor:
    for p in parents:
        if p.requires_grad:
            return Tensor(data, requires_grad=True, op=op, parents=parents, grad_fn=grad_fn)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        _check_broadcast(a, b, "add")
    out = a.data + b.data

    def grad_fn(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def grad_fn(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "mul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b`` (b broadcast over rows); one graph node."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.shape} @ {w.shape}")
    out = x.data @ w.data + b.data

    def grad_fn(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, w, b), grad_fn, "affine")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def grad_fn(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), grad_fn, "relu")


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), grad_fn, "sigmoid")


def absolute(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.abs(a.data)

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return _make(out, (a,), grad_fn, "abs")


def reduce(op: str, a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op!r}")
    a = _as_tensor(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    if op == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)
        count = 1
    else:
        out = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.size if axis is None else a.shape[axis]

    def grad_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        full = np.broadcast_to(g, a.shape).astype(a.dtype) / count
        return (full,)

    return _make(out, (a,), grad_fn, op)


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("sum", a, axis, keepdims)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("mean", a, axis, keepdims)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), grad_fn, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out, tuple(tensors), grad_fn, "concat")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-d tensor by integer index (rows may repeat)."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-d tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), grad_fn, "gather_rows")


def scatter_rows(a: Tensor, indices, num_rows: int) -> Tensor:
    """Place rows of ``a`` at ``indices`` in a zero matrix of ``num_rows`` rows.

    Duplicate indices accumulate additively.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"scatter_rows expects a 2-d tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexError("scatter index out of range")
    out = np.zeros((num_rows, a.shape[1]), dtype=a.dtype)
    np.add.at(out, idx, a.data)

    def grad_fn(g):
        return (g[idx],)

    return _make(out, (a,), grad_fn, "scatter_rows")


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-softmax of ``logits`` at ``label`` (max-shifted)."""
    logits = _as_tensor(logits)
    x = logits.data.reshape(-1)
    label = int(label)
    if not 0 <= label < x.size:
        raise IndexError(f"label {label} out of range for {x.size} classes")
    m = x.max()
    shifted = x - m
    exp = np.exp(shifted)
    denom = exp.sum()
    loss = np.log(denom) - shifted[label]
    out = np.asarray(loss, dtype=x.dtype)

    def grad_fn(g):
        p = exp / denom
        gvec = p.copy()
        gvec[label] -= 1.0
        return ((gvec * g).reshape(logits.shape).astype(logits.dtype),)

    return _make(out, (logits,), grad_fn, "softmax_cross_entropy")


def cross_entropy_rows(logits: Tensor, labels) -> Tensor:
    """Per-row negative log-softmax at the given labels; returns (rows,)."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy_rows expects 2-d logits, got {logits.shape}")
    idx = np.asarray(labels, dtype=np.intp)
    if idx.shape != (logits.shape[0],):
        raise ValueError("one label per logits row is required")
    if idx.size and (idx.min() < 0 or idx.max() >= logits.shape[1]):
        raise IndexError("label out of range")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    rows = np.arange(x.shape[0])
    out = np.log(denom) - shifted[rows, idx]

    def grad_fn(g):
        p = exp / denom[:, None]
        p[rows, idx] -= 1.0
        return (p * g[:, None],)

    return _make(out, (logits,), grad_fn, "cross_entropy_rows")


def squared_l2_distance(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"squared_l2_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray((diff * diff).sum(), dtype=a.dtype)

    def grad_fn(g):
        ga = (2.0 * g) * diff if a.requires_grad else None
        gb = (-2.0 * g) * diff if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "squared_l2_distance")


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into ``grad`` of every requires-grad tensor.

    Repeated calls from the same root keep adding; callers clear grads
    between optimization steps.
    """
    if root.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
    tape = Tape.trace(root)
    flows: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and (node._grad is not None or not node._parents):
            if node._grad is None:
                node._grad = np.zeros_like(node.data)
            node._grad += g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = flows.get(id(parent))
            flows[id(parent)] = pg if held is None else held + pg
