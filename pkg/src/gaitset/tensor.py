"""Reverse-mode autodiff over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient buffer. Forward ops
record a vector-Jacobian closure; ``backward()`` on a scalar walks the tape
in reverse topological order and accumulates into ``.grad`` of every
``requires_grad`` ancestor. Values are float32 by default; wrap code in
``precision("float64")`` for finite-difference-grade accuracy.

Only the operations the gait pipeline needs are implemented; everything is
CPU numpy, single-threaded per graph, immutable after construction.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DimensionError, UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_grad_enabled = True


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(name):
    """Temporarily switch the default dtype ('float32' or 'float64')."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = _DTYPES[name]
    try:
        yield
    finally:
        _default_dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (pure inference)."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

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

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        """Accumulate d(self)/d(ancestor) into .grad of requires_grad ancestors."""
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss tensor")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor with no recorded graph")
        order = _toposort(self)
        flow = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._vjp is None:
                # leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flow:
                    flow[key] = flow[key] + pg
                else:
                    flow[key] = pg


def _toposort(root):
    """Reverse topological order (root first), iterative DFS."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p.requires_grad or p._parents):
                stack.append((p, False))
    return list(reversed(order))


def astensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype in (np.float32, np.float64):
        return Tensor(x, dtype=x.dtype)
    return Tensor(x, dtype=dtype or _default_dtype)


def _make(data, parents, vjp):
    """Wrap a forward result; record the tape node only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp()
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting semantics)

def add(a, b):
    a, b = astensor(a), astensor(b)

    def vjp():
        sa, sb = a.shape, b.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = astensor(a), astensor(b)

    def vjp():
        sa, sb = a.shape, b.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))

    return _make(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = astensor(a), astensor(b)

    def vjp():
        ad, bd = a.data, b.data
        return lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _make(a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = astensor(a), astensor(b)

    def vjp():
        ad, bd = a.data, b.data
        return lambda g: (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _make(a.data / b.data, (a, b), vjp)


def relu(a):
    a = astensor(a)

    def vjp():
        mask = a.data > 0
        return lambda g: (g * mask,)

    return _make(np.maximum(a.data, 0), (a,), vjp)


def leaky_relu(a, slope=0.01):
    a = astensor(a)
    one = a.data.dtype.type(1)
    scale = np.where(a.data >= 0, one, a.data.dtype.type(slope))
    out = a.data * scale

    def vjp():
        return lambda g: (g * scale,)

    return _make(out, (a,), vjp)


def sigmoid(a):
    a = astensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    s = s.astype(a.data.dtype, copy=False)

    def vjp():
        return lambda g: (g * s * (1 - s),)

    return _make(s, (a,), vjp)


def exp(a):
    a = astensor(a)
    e = np.exp(a.data)

    def vjp():
        return lambda g: (g * e,)

    return _make(e, (a,), vjp)


def log(a):
    a = astensor(a)

    def vjp():
        return lambda g: (g / a.data,)

    return _make(np.log(a.data), (a,), vjp)


def sqrt(a):
    a = astensor(a)
    r = np.sqrt(a.data)

    def vjp():
        return lambda g: (g * (0.5 / r),)

    return _make(r, (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    a = astensor(a)
    if isinstance(shape, int):
        shape = (shape,)

    def vjp():
        old = a.shape
        return lambda g: (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes):
    a = astensor(a)
    axes = tuple(axes)

    def vjp():
        inverse = tuple(np.argsort(axes))
        return lambda g: (g.transpose(inverse),)

    return _make(a.data.transpose(axes), (a,), vjp)


def getitem(a, idx):
    a = astensor(a)

    def vjp():
        shape = a.shape

        def back(g):
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, idx, g)
            return (out,)

        return back

    return _make(a.data[idx], (a,), vjp)


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp():
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        return lambda g: tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def broadcast_to(a, shape):
    a = astensor(a)
    shape = tuple(shape)

    def vjp():
        old = a.shape
        return lambda g: (_unbroadcast(g, old),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# reductions

def tsum(a, axis=None, keepdims=False):
    a = astensor(a)

    def vjp():
        shape = a.shape

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return back

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def amax(a, axis, keepdims=False):
    """Max over one axis; ties route gradient to the first occurrence."""
    a = astensor(a)
    out = a.data.max(axis=axis, keepdims=keepdims)

    def vjp():
        arg = np.argmax(a.data, axis=axis)
        shape = a.shape

        def back(g):
            gg = g if keepdims else np.expand_dims(np.asarray(g), axis)
            full = np.zeros(shape, dtype=gg.dtype)
            np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
            return (full,)

        return back

    return _make(out, (a,), vjp)


def median_low(a, axis, keepdims=False):
    """Lower-middle order statistic over one axis.

    For odd n this is the true median; for even n the lower of the two
    middle values. The gradient flows to the single selected element.
    """
    a = astensor(a)
    n = a.shape[axis]
    k = (n - 1) // 2
    arg = np.expand_dims(np.argpartition(a.data, k, axis=axis).take(k, axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis)
    if not keepdims:
        out = out.squeeze(axis=axis)

    def vjp():
        shape = a.shape

        def back(g):
            gg = g if keepdims else np.expand_dims(np.asarray(g), axis)
            full = np.zeros(shape, dtype=gg.dtype)
            np.put_along_axis(full, arg, gg, axis=axis)
            return (full,)

        return back

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Batched matrix product with numpy broadcasting of leading axes."""
    a, b = astensor(a), astensor(b)
    data = np.matmul(a.data, b.data)

    def vjp():
        ad, bd = a.data, b.data

        def back(g):
            ga = np.matmul(g, bd.swapaxes(-1, -2))
            gb = np.matmul(ad.swapaxes(-1, -2), g)
            return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

        return back

    return _make(data, (a, b), vjp)


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)
