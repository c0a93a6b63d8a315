"""Define-by-run reverse-mode autodiff over numpy float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a closure
propagating the output adjoint back to them. Graphs are rebuilt on every
forward pass and nothing is updated in place.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .errors import FormatError, InvalidArgument, NonFiniteError

LOG_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite value produced by op '{op}'")
        self.data = data
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def leaf(data, requires_grad=True) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="const")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgument(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- ops

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward_fn=bw, op="add")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward_fn=bw, op="mul")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgument(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, parents=(a, b), backward_fn=bw, op="matmul")


def fixed_matmul(a, m: np.ndarray) -> Tensor:
    """a @ m for a constant matrix m (DFT blocks, filterbanks); only a is differentiated."""
    a = _lift(a)
    m = np.asarray(m, dtype=np.float64)
    if a.data.ndim != 2 or m.ndim != 2 or a.shape[1] != m.shape[0]:
        raise InvalidArgument(f"fixed_matmul: incompatible shapes {a.shape} and {m.shape}")
    mt = m.T

    def bw(g):
        return (g @ mt,)

    return Tensor(a.data @ m, parents=(a,), backward_fn=bw, op="fixed_matmul")


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, 0.0), parents=(a,), backward_fn=bw, op="relu")


def log(a) -> Tensor:
    a = _lift(a)
    keep = a.data >= LOG_FLOOR
    x = np.where(keep, a.data, LOG_FLOOR)

    def bw(g):
        return (np.where(keep, g / x, 0.0),)

    return Tensor(np.log(x), parents=(a,), backward_fn=bw, op="log")


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):  # overflow surfaces as a NonFiniteError instead
        out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return Tensor(out, parents=(a,), backward_fn=bw, op="exp")


def square(a) -> Tensor:
    a = _lift(a)

    def bw(g):
        return (2.0 * a.data * g,)

    return Tensor(a.data * a.data, parents=(a,), backward_fn=bw, op="square")


def sum_(a, axis=None) -> Tensor:
    a = _lift(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(a.data.sum(axis=axis), parents=(a,), backward_fn=bw, op="sum")


def mean(a, axis=None) -> Tensor:
    a = _lift(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def slice_(a, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in the backward pass."""
    a = _lift(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise InvalidArgument(f"slice: {e} for shape {a.shape}") from None

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(out, parents=(a,), backward_fn=bw, op="slice")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise InvalidArgument("concat: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(out, parents=tuple(tensors), backward_fn=bw, op="concat")


def log_softmax(a) -> Tensor:
    """Row-wise log-softmax over the last axis; probabilities are floored at 1e-12 before the log."""
    a = _lift(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    raw = z - lse
    keep = raw >= np.log(LOG_FLOOR)
    out = np.where(keep, raw, np.log(LOG_FLOOR))
    p = np.exp(raw)

    def bw(g):
        g = np.where(keep, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor(out, parents=(a,), backward_fn=bw, op="log_softmax")


def custom(inputs, value, backward_fn, op="custom") -> Tensor:
    """Wrap an externally computed value with a hand-written adjoint rule."""
    return Tensor(value, parents=tuple(_lift(t) for t in inputs), backward_fn=backward_fn, op=op)


# ---------------------------------------------------------------- backward

def _toposort(root: Tensor):
    order, seen = [], set()
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt=None):
    """Populate ``.grad`` on every differentiable node reachable from ``loss``.

    If ``wrt`` is given, returns the list of gradients for those tensors; ones
    not on a path to the loss get zeros.
    """
    if loss.data.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, grads):
            if not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
    if wrt is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


def gradient(f, point) -> tuple[float, np.ndarray]:
    x = leaf(point)
    out = f(x)
    (g,) = backward(out, [x])
    return float(out.data), g


def grad_check(f, point, eps: float = 1e-5, coords=None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``coords`` optionally restricts the check to a subset of flat indices.
    """
    point = np.array(point, dtype=np.float64)
    _, g = gradient(f, point)
    g = g.ravel()
    coords = range(point.size) if coords is None else coords
    worst = 0.0
    for i in coords:
        xp = point.copy().ravel()
        xm = point.copy().ravel()
        xp[i] += eps
        xm[i] -= eps
        fp = float(f(constant(xp.reshape(point.shape))).data)
        fm = float(f(constant(xm.reshape(point.shape))).data)
        fd = (fp - fm) / (2 * eps)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return worst


# ---------------------------------------------------------------- parameters

class ParameterSet:
    """Ordered named float64 tensors. Shapes are fixed at creation."""

    MAGIC = b"CGPT"
    VERSION = 1

    def __init__(self):
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        self.trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> None:
        if name in self._arrays:
            raise InvalidArgument(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.array(value, dtype=np.float64)
        self.trainable[name] = trainable

    def __getitem__(self, name) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._arrays[name].shape:
            raise InvalidArgument(f"shape of {name!r} is fixed at {self._arrays[name].shape}, got {value.shape}")
        self._arrays[name] = value.copy()

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self, trainable_only=False):
        return [n for n in self._arrays if self.trainable[n] or not trainable_only]

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for n, v in self._arrays.items():
            out.add(n, v.copy(), self.trainable[n])
        return out

    def to_bytes(self) -> bytes:
        parts = [self.MAGIC, struct.pack("<II", self.VERSION, len(self._arrays))]
        for name, arr in self._arrays.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
            parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParameterSet":
        if buf[:4] != cls.MAGIC:
            raise FormatError(f"bad parameter file magic {buf[:4]!r}")
        version, count = struct.unpack_from("<II", buf, 4)
        if version != cls.VERSION:
            raise FormatError(f"unsupported parameter file version={version}")
        off = 12
        out = cls()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            out.add(name, arr.astype(np.float64))
        return out

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParameterSet":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())
