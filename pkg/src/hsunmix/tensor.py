"""Dense tensor with eager reverse-mode differentiation.

Each op runs immediately and, when any input requires a gradient, records a
closure that maps the output gradient to input gradients.  ``backward``
orders the recorded nodes (the tape) and sweeps it once in reverse.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

MAX_NDIM = 5

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the floating type new tensors are created with.

    Training always runs in float32; gradient checks switch to float64 so
    finite differences are not swamped by rounding.
    """
    old = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = old


def grad_enabled():
    return _get("grad", True)


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = old


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=default_dtype())
        if arr.ndim > MAX_NDIM:
            raise ValueError(f"tensors are limited to {MAX_NDIM} axes, got {arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- construction of op outputs ------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        arr = np.asarray(data)
        dt = default_dtype()
        if arr.dtype != dt and not any(p.data.dtype == np.float64 for p in parents):
            arr = arr.astype(dt)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dt)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        out.data = arr
        out.grad = None
        out.name = None
        out.op = op
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- basic properties --------------------------------------------------

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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- backward --------------------------------------------------------

    def tape(self):
        """Nodes reachable from self in an order where parents precede children."""
        order, seen = [], set()
        stack = [(self, False)]
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

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise RuntimeError("backward() without a seed needs a single-element tensor")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(self.tape()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    """Broadcasting elementwise product."""
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def reciprocal(a):
    with np.errstate(divide="ignore"):  # a zero divisor is reported as NonFiniteError
        out = 1.0 / a.data
    return Tensor._from_op(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def power(a, p):
    p = float(p)

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._from_op(a.data ** p, (a,), backward, f"pow{p:g}")


def exp(a):
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# -- reductions --------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / n)


def amax(a, axis):
    """Max over ``axis``; the gradient goes to the first maximal element."""
    axes = _norm_axes(axis, a.ndim)
    keep = tuple(i for i in range(a.ndim) if i not in axes)
    perm = keep + axes
    moved = a.data.transpose(perm)
    flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gm = gflat.reshape(moved.shape)
        return (gm.transpose(np.argsort(perm)),)

    return Tensor._from_op(out, (a,), backward, "amax")


# -- shape ops -------------------------------------------------------------------

def reshape(a, shape):
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor._from_op(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def index(a, idx):
    out = a.data[idx]

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        ga = np.zeros_like(a.data, dtype=g.dtype)
        if basic:
            ga[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(ga, idx, g)
        return (ga,)

    return Tensor._from_op(np.array(out), (a,), backward, "index")


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def pad(a, widths):
    """Constant zero padding; ``widths`` as in :func:`numpy.pad`."""
    out = np.pad(a.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return Tensor._from_op(out, (a,), lambda g: (g[sl],), "pad")


# -- linear algebra --------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` with numpy batch semantics (both operands at least 2-D)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two axes")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad=requires_grad)
