"""Small define-by-run reverse-mode autodiff over dense float64 arrays.

Every op returns a :class:`Tensor`. Outputs that depend on a tensor with
``requires_grad`` remember their parents and a backward closure; the global
creation counter orders nodes, so :func:`backward` can walk them in reverse
execution order.

Broadcasting is deliberately narrow: ``add`` accepts a bias row
``(..., d) + (d,)`` and nothing else. Use :func:`expand` to make any other
broadcast explicit.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_consumed", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_counter)
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t: Tensor) -> Tensor:
    """Same values, no history: gradients never flow through the result."""
    return Tensor(t.data)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, grad=None):
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss._consumed:
        raise RuntimeError("backward already run on this graph; rebuild the forward pass first")
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        loss._consumed = True
        return
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad and id(p) not in nodes)
    if any(t._consumed for t in nodes.values()):
        raise RuntimeError("graph already differentiated; rebuild the forward pass first")
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    grads = {id(loss): np.asarray(grad, dtype=np.float64)}
    for t in order:
        g = grads.pop(id(t), None)
        if t._backward is None:
            if g is not None:
                _accum(t, g)
            continue
        if g is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accum(parent, pg)
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        t._backward = None
        t._parents = ()
        t._consumed = True
    loss._consumed = True


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        axes = tuple(range(b.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g.sum(axis=axes), g))
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim == 0:
        s = float(b.data)
        return _make(a.data * s, (a, b), lambda g: (g * s, np.sum(g * a.data)))
    if a.data.ndim == 0:
        return mul(b, a)
    _check_same("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, s: float):
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log: non-positive input")
    return _make(np.log(x), (a,), lambda g: (g / x,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 and b.ndim != a.ndim:
        raise ValueError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    if b.ndim == a.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].ndim
    if any(t.ndim != ref for t in tensors):
        raise ValueError("concat: rank mismatch")
    ax = axis % ref
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(out, tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), bw)


def slice_(a, idx):
    a = as_tensor(a)
    out = a.data[idx]
    if np.shares_memory(out, a.data):
        out = out.copy()

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw)


def reshape(a, shape):
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None):
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def expand(a, axis, n):
    """Insert a new axis at ``axis`` and repeat the tensor ``n`` times along it."""
    x = np.expand_dims(a.data, axis)
    reps = [1] * x.ndim
    reps[axis] = n
    return _make(np.tile(x, reps), (a,), lambda g: (g.sum(axis=axis),))


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding_lookup: id out of range for vocabulary of {vocab}")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(out, (table,), bw)


# ---------------------------------------------------------------- reductions


def _axis(a, axis):
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"invalid axis {axis} for rank {a.ndim}")
    return axis % a.ndim


def sum_(a, axis=None):
    ax = _axis(a, axis)
    out = a.data.sum(axis=ax)

    def bw(g):
        if ax is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[_axis(a, axis)]
    return scale(sum_(a, axis), 1.0 / n)


def softmax(a, axis=-1):
    ax = _axis(a, axis)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _make(out, (a,), bw)


def log_softmax(a, axis=-1):
    ax = _axis(a, axis)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return _make(out, (a,), bw)


def cross_entropy(logits, targets):
    """Per-row negative log-likelihood of ``targets`` under softmax(``logits``).

    ``logits`` is (N, V); returns an (N,) tensor.
    """
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (N, V) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"cross_entropy: {n} rows but targets shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError("cross_entropy: target id out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    out = -logp[rows, targets]

    def bw(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * g[:, None],)

    return _make(out, (logits,), bw)


def dot(a, b):
    """Sum of the elementwise product; a scalar tensor."""
    return sum_(mul(a, b))


# ---------------------------------------------------------------- utilities


def numerical_grad(f, arrays, eps=1e-4):
    """Central finite differences of scalar ``f()`` w.r.t. each array in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + eps
            hi = f()
            arr[i] = orig - eps
            lo = f()
            arr[i] = orig
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a, b, floor=1e-7):
    """``|a - b| / (|a| + |b|)`` in the Euclidean norm, guarded near zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))
