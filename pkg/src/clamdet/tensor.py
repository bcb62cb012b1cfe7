"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every kernel records a node holding its parents and a backward closure. A
single call to :meth:`Tensor.backward` walks the tape in reverse topological
order and then releases it, so a graph can be differentiated only once.

Broadcasting is limited to tensor-with-scalar. Anything else goes through
:func:`expand` explicitly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform for a kernel."""


class NumericError(ArithmeticError):
    """A kernel produced or received non-finite values."""


class GraphStateError(RuntimeError):
    """Backward requested on a graph that was already consumed."""


class BlobFormatError(ValueError):
    """A named-tensor blob has a bad magic or malformed header."""


class _Node:
    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.node.op}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar -----------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    # -- differentiation --------------------------------------------------
    def backward(self) -> dict[int, np.ndarray]:
        """Accumulate d self / d leaf into every reachable grad-tracked leaf.

        Returns a map from ``id(leaf)`` to its gradient array.
        """
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if self.node is None:
            raise ValueError("loss is not connected to any grad-tracked tensor")
        if self.node.consumed:
            raise GraphStateError("graph already consumed by a previous backward()")

        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        leaves: dict[int, Tensor] = {}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            node = t.node
            if node is None:
                if t.requires_grad:
                    leaves[id(t)] = t
                    if g is not None:
                        t.grad = g if t.grad is None else t.grad + g
                continue
            if node.consumed:
                raise GraphStateError("graph already consumed by a previous backward()")
            if g is not None:
                parent_grads = node.backward_fn(g)
                for p, pg in zip(node.parents, parent_grads):
                    if pg is None or not _tracks(p):
                        continue
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node.consumed = True
        out = {}
        for key, leaf in leaves.items():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            out[key] = leaf.grad
        return out


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if _tracks(p) and id(p) not in seen:
                    stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite output from kernel '{op}'")


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out.node = None
    if any(_tracks(p) for p in parents):
        out.node = _Node(op, tuple(parents), backward_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> bool:
    """True when b (or a) is a scalar to be broadcast; raises on other mismatches."""
    if a.shape == b.shape:
        return False
    if a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return True
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, a), _unbroadcast(g * ad, b)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, "add_scalar", (a,), lambda g: (g,))


# -- linear algebra / layout -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Accepted forms: (m,k)@(k,n); (...,m,k)@(k,n) with a 2-D right operand; and
    batched (...,m,k)@(...,k,n) with identical leading dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        out = ad @ bd

        def backward(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    elif a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        out = ad @ bd

        def backward(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g
    else:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return _make(out, "matmul", (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,),
                 lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    old = a.shape
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules); backward sums."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"expand: cannot broadcast {a.shape} to {shape}") from None
    old = a.shape
    lead = len(shape) - len(old)

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(old) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(old),)
    return _make(out, "expand", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _make(out, "concat", tuple(tensors),
                 lambda g: tuple(np.split(g, bounds, axis=ax)))


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of shape {a.shape}")
    out = []
    start = 0
    for n in sizes:
        out.append(slice_axis(a, start, start + n, ax))
        start += n
    return out


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    ax = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)
    return _make(a.data[idx].copy(), "slice", (a,), backward)


def take_rows(a: Tensor, rows: Sequence[int]) -> Tensor:
    """Select rows along axis 0 (differentiable gather)."""
    rows = np.asarray(rows, dtype=np.intp)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, rows, g)
        return (full,)
    return _make(a.data[rows].copy(), "take_rows", (a,), backward)


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))
    return _make(np.asarray(a.data.sum(axis=axes)), "sum", (a,),
                 lambda g: (np.broadcast_to(g.reshape(kept), shape).copy(),))


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))
    return _make(np.asarray(a.data.mean(axis=axes)), "mean", (a,),
                 lambda g: (np.broadcast_to(g.reshape(kept) / n, shape).copy(),))


# -- elementwise unary ------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("kernel 'log' needs strictly positive inputs")
    x = a.data
    return _make(np.log(x), "log", (a,), lambda g: (g / x,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("kernel 'sqrt' needs nonnegative inputs")
    out = np.sqrt(a.data)
    with np.errstate(divide="ignore"):
        return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * s,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = sigmoid(Tensor(x)).data
    return _make(out, "softplus", (a,), lambda g: (g * sig,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data > lo
    return _make(np.where(mask, a.data, lo), "clamp_min", (a,), lambda g: (g * mask,))


def huber(a: Tensor, delta: float) -> Tensor:
    """Elementwise Huber penalty of ``a`` with threshold ``delta``."""
    x = a.data
    ax = np.abs(x)
    quad = ax <= delta
    out = np.where(quad, 0.5 * x * x, delta * (ax - 0.5 * delta))
    dx = np.where(quad, x, delta * np.sign(x))
    return _make(out, "huber", (a,), lambda g: (g * dx,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {a.shape}")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, "softmax", (a,), backward)


def sqdist_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise squared Euclidean distance between two (n, e) matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"sqdist_rows: shapes {a.shape} and {b.shape} do not match")
    diff = a.data - b.data
    out = (diff * diff).sum(axis=1)

    def backward(g):
        gd = 2.0 * diff * g[:, None]
        return gd, -gd
    return _make(out, "sqdist_rows", (a, b), backward)


def custom(op: str, data: np.ndarray, parents: Sequence[Tensor],
           backward_fn: Callable) -> Tensor:
    """Register an externally computed kernel (used by the compiled core)."""
    return _make(np.asarray(data, dtype=np.float64), op, parents, backward_fn)


# -- gradient check ------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    excluded: int = 0
    worst: str = ""
    # largest |analytic - numeric| over compared coordinates; float64 roundoff
    # puts a floor of roughly ulp(f) / (2h) under it
    max_abs_error: float = 0.0


def grad_check(fn: Callable[..., Tensor], point: Sequence, h: float = 1e-6,
               tol: float = 1e-5, kink_tol: float | None = None) -> GradCheckReport:
    """Compare backward gradients of scalar ``fn(*point)`` with central differences.

    Coordinates where a relu/clamp-style kink lies within ``h`` of the input
    (detected by a mismatch between one-sided differences) are excluded and
    counted in ``report.excluded``.
    """
    arrays = [np.array(as_tensor(p).data, dtype=np.float64) for p in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*leaves)
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: function value is not finite")
    loss.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    f0 = loss.item()

    def evaluate(k, flat_idx, delta):
        args = [Tensor(a) for a in arrays]
        buf = arrays[k].copy()
        buf.reshape(-1)[flat_idx] += delta
        args[k] = Tensor(buf)
        v = fn(*args).item()
        if not np.isfinite(v):
            raise NumericError("grad_check: function value is not finite")
        return v

    worst = 0.0
    worst_abs = 0.0
    where = ""
    excluded = 0
    kink_tol = kink_tol if kink_tol is not None else max(1e-3, 1e3 * tol)
    for k, arr in enumerate(arrays):
        ga = analytic[k].reshape(-1)
        for i in range(arr.size):
            fp = evaluate(k, i, h)
            fm = evaluate(k, i, -h)
            num = (fp - fm) / (2 * h)
            fwd = (fp - f0) / h
            bwd = (f0 - fm) / h
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd) + abs(bwd)):
                excluded += 1
                continue
            rel = abs(ga[i] - num) / max(1e-8, abs(ga[i]) + abs(num))
            worst_abs = max(worst_abs, abs(ga[i] - num))
            if rel > worst:
                worst = rel
                where = f"arg{k}[{i}]"
    return GradCheckReport(max_rel_error=worst, passed=worst < tol, excluded=excluded, worst=where,
                           max_abs_error=worst_abs)


# -- named-tensor blob ------------------------------------------------------------

BLOB_MAGIC = b"CLT1"


def encode_blob(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [BLOB_MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_blob(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != BLOB_MAGIC:
        raise BlobFormatError(f"bad magic {buf[:4]!r}, expected {BLOB_MAGIC!r}")
    pos = 4
    out: dict[str, np.ndarray] = {}

    def need(n, what):
        if pos + n > len(buf):
            raise OSError(f"truncated blob reading {what}: expected {n} bytes, "
                          f"got {len(buf) - pos}")

    while pos < len(buf):
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 1, "name")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        need(4 * rank, f"extents of {name!r}")
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        need(nbytes, f"payload of {name!r}")
        if name in out:
            raise BlobFormatError(f"duplicate entry {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    return out


def save_blob(tensors: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(encode_blob(tensors))


def load_blob(path: str | Path) -> dict[str, np.ndarray]:
    return decode_blob(Path(path).read_bytes())


def parameters_to_arrays(params: Iterable[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in params}
