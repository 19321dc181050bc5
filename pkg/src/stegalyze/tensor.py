"""Dense tensors with tape-free reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their inputs and a closure mapping the output gradient to
input gradients; :func:`backward` walks that graph in reverse topological
order. Tensors that do not require gradients record nothing, so inference
allocates no graph.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

CLAMP = 30.0
DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Flat view of the values."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{rg})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def _wrap(x, dtype):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is None or x.dtype == dtype:
            return x
        return Tensor(x.data.astype(dtype))
    return Tensor(x, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def make_op(data, parents, backward_fn, op):
    """Wrap ``data`` as the result of an operation on ``parents``.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per parent.
    Lineage is only kept when some parent requires a gradient.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def backward(loss: Tensor):
    """Fill ``grad`` of every gradient-requiring ancestor of the scalar ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order = []
    seen = set()
    stack = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            g = np.asarray(g, dtype=p.dtype)
            # never accumulate in place: a parent's grad may alias its child's
            p.grad = g if p.grad is None else p.grad + g


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return make_op(ad @ bd, (a, b), _bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return make_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


# -- elementwise -----------------------------------------------------------


def _check_broadcast(a, b, name):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        shape = None
    if shape != a.shape:
        raise DimensionError(f"{name}: shape {b.shape} does not broadcast onto {a.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def _bw(g):
        return (
            g * bd if a.requires_grad else None,
            _unbroadcast(g * ad, b.shape) if b.requires_grad else None,
        )

    return make_op(ad * bd, (a, b), _bw, "mul")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- nonlinearities --------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    # input clamped to +-30: exp never overflows and sigma'(30) ~ 1e-13 anyway
    y = 1.0 / (1.0 + np.exp(-np.clip(x.data, -CLAMP, CLAMP)))
    y = y.astype(x.dtype, copy=False)
    return make_op(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(np.clip(x.data, -CLAMP, CLAMP))
    return make_op(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    # np.maximum propagates NaN, so a poisoned input is still caught downstream
    return make_op(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * pos,), "relu")


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def log(x: Tensor, floor: float = 1e-12) -> Tensor:
    safe = np.maximum(x.data, x.dtype.type(floor))
    return make_op(np.log(safe), (x,), lambda g: (g / safe,), "log")


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax; entries where ``mask`` is false get exactly 0.

    Every slice along ``axis`` must keep at least one unmasked entry.
    """
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype, copy=False)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), _bw, "softmax")


# -- shape manipulation ----------------------------------------------------


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty list")
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"concat axis {axis} out of range for {nd}-d tensors")
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(
                f"concat: incompatible shapes {[tt.shape for tt in tensors]} along axis {axis}"
            )
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, _bw, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def index(x: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = x.data[idx]

    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(out), (x,), _bw, "index")


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), _bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- gathers ---------------------------------------------------------------


def take_rows(table: Tensor, ids) -> Tensor:
    """``out[...] = table[ids[...]]``; gradients scatter-add into the table."""
    ids = np.asarray(ids)
    V, C = table.shape
    flat = ids.reshape(-1)

    def _bw(g):
        return (kernels.scatter_add_rows(V, flat, g.reshape(-1, C)),)

    return make_op(table.data[ids], (table,), _bw, "take_rows")


def reindex_time(x: Tensor, idx) -> Tensor:
    """Per-row permutation along axis 1: ``out[b, t] = x[b, idx[b, t]]``."""
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])[:, None]

    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return make_op(x.data[rows, idx], (x,), _bw, "reindex_time")


def unfold(x: Tensor, width: int) -> Tensor:
    """Valid sliding windows over axis 1, flattened to ``[B, T-width+1, width*C]``."""
    T = x.shape[1]
    return make_op(kernels.unfold(x.data, width), (x,), lambda g: (kernels.fold(g, width, T),), "unfold")
