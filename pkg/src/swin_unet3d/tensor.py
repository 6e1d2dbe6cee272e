"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major float32/float64 numpy array plus an
optional gradient buffer. Every differentiable operation records a backward
closure and references to its inputs; ``backward()`` on a scalar replays the
recorded graph once in reverse topological order and accumulates gradients
into every reachable tensor with ``requires_grad=True``. Repeated calls
accumulate (gradient buffers are zeroed only via ``zero_grad``).

Broadcasting in elementwise ops is deliberately narrow: two operands combine
only when their shapes are equal, one of them is a scalar, or one shape is an
exact trailing suffix of the other. Anything else raises :class:`ShapeError`;
use :func:`broadcast_to` to make wider intent explicit.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "ConfigError",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "layer_norm",
    "softmax_last_axis",
    "cyclic_roll",
    "gelu",
    "reshape",
    "transpose",
    "broadcast_to",
    "pad",
    "crop",
    "concat",
    "split",
    "gather_rows",
    "tsum",
    "tmean",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Shape or dtype contract violation in a tensor operation."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._inputs: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = ""

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable tensors."""
        if self.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        # Per-call gradient flow; .grad buffers accumulate across calls.
        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._inputs, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flows.get(id(parent))
                flows[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return _elementwise_add(self, other, 1.0)

    def __radd__(self, other):
        return _elementwise_add(self, other, 1.0)

    def __sub__(self, other):
        return _elementwise_add(self, other, -1.0)

    def __rsub__(self, other):
        return _elementwise_add(-self, other, 1.0)

    def __neg__(self):
        out = _make(-self.data, (self,), lambda g: (-g,), "neg")
        return out

    def __mul__(self, other):
        return _elementwise_mul(self, other)

    def __rmul__(self, other):
        return _elementwise_mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported")
        return _elementwise_mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable tensor; always participates in gradient recording."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


# -- graph plumbing -----------------------------------------------------------


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = inputs
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._inputs = ()
        out._backward_fn = None
    return out


def _as_constant(value, dtype) -> np.ndarray:
    return np.asarray(value, dtype=dtype)


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _broadcast_compatible(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    if sa == sb or len(sa) == 0 or len(sb) == 0:
        return True
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return long[len(long) - len(short):] == short


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _elementwise_add(a: Tensor, other, sign: float) -> Tensor:
    if not isinstance(other, Tensor):
        c = _as_constant(other, a.dtype)
        data = a.data + sign * c
        return _make(data, (a,), lambda g: (g,), "add")
    _check_dtypes(a, other, "add")
    if not _broadcast_compatible(a.shape, other.shape):
        raise ShapeError(f"add: cannot combine shapes {a.shape} and {other.shape}")
    data = a.data + sign * other.data

    def bw(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = sign * _unbroadcast(g, other.shape) if other.requires_grad else None
        return ga, gb

    return _make(data, (a, other), bw, "add")


def _elementwise_mul(a: Tensor, other) -> Tensor:
    if not isinstance(other, Tensor):
        c = _as_constant(other, a.dtype)
        data = a.data * c
        return _make(data, (a,), lambda g: (g * c,), "mul")
    _check_dtypes(a, other, "mul")
    if not _broadcast_compatible(a.shape, other.shape):
        raise ShapeError(f"mul: cannot combine shapes {a.shape} and {other.shape}")
    data = a.data * other.data

    def bw(g):
        ga = _unbroadcast(g * other.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, other.shape) if other.requires_grad else None
        return ga, gb

    return _make(data, (a, other), bw, "mul")


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of ``a[..., m, k]`` with ``b[k, n]`` or ``b[..., k, n]``."""
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} and {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading extents disagree for {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _make(data, (a, b), bw, "matmul")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: last axis is empty")
    if eps <= 0:
        raise ConfigError("layer_norm: eps must be positive")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bw(g):
        gx = ggamma = gbeta = None
        gxhat = g * gamma.data
        if x.requires_grad:
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx = (gxhat - m1 - xhat * m2) * inv
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(data, (x, gamma, beta), bw, "layer_norm")


def softmax_last_axis(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), bw, "softmax")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    inv_sqrt2 = np.asarray(1.0 / np.sqrt(2.0), dtype=x.dtype)
    cdf = 0.5 * (1.0 + special.erf(x.data * inv_sqrt2))
    data = (x.data * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return ((g * (cdf + x.data * pdf)).astype(x.dtype, copy=False),)

    return _make(data, (x,), bw, "gelu")


# -- structural ops (lossless rearrangements) ---------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = x.data.reshape(shape)
    src = x.shape
    return _make(data, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(int(a) for a in np.argsort(axes))
    data = x.data.transpose(axes)
    return _make(data, (x,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicitly expand leading axes and extent-1 axes to ``shape``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < x.ndim:
        raise ShapeError(f"broadcast_to: target {shape} has fewer axes than {x.shape}")
    aligned = (1,) * (len(shape) - x.ndim) + x.shape
    for have, want in zip(aligned, shape):
        if have != want and have != 1:
            raise ShapeError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    data = np.broadcast_to(x.data, shape)
    lead = len(shape) - x.ndim
    ones = tuple(i + lead for i, e in enumerate(x.shape) if e == 1 and shape[i + lead] != 1)

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if ones:
            g = g.sum(axis=tuple(a - lead for a in ones), keepdims=True)
        return (g.reshape(x.shape),)

    return _make(data, (x,), bw, "broadcast")


def cyclic_roll(x: Tensor, shifts, axes) -> Tensor:
    """Cyclically shift elements: index ``i`` moves to ``(i + shift) mod extent``."""
    shifts = tuple(int(s) for s in shifts)
    axes = tuple(int(a) for a in axes)
    if len(shifts) != len(axes):
        raise ShapeError("cyclic_roll: shifts and axes must pair up")
    data = np.roll(x.data, shifts, axis=axes)
    back = tuple(-s for s in shifts)
    return _make(data, (x,), lambda g: (np.roll(g, back, axis=axes),), "roll")


def pad(x: Tensor, pad_width) -> Tensor:
    """Zero-pad with per-axis (before, after) pairs."""
    pad_width = tuple((int(b), int(a)) for b, a in pad_width)
    if len(pad_width) != x.ndim:
        raise ShapeError(f"pad: expected {x.ndim} pairs, got {len(pad_width)}")
    data = np.pad(x.data, pad_width)
    slices = tuple(slice(b, b + e) for (b, _), e in zip(pad_width, x.shape))
    return _make(data, (x,), lambda g: (g[slices],), "pad")


def crop(x: Tensor, starts, sizes) -> Tensor:
    """Take the axis-aligned sub-block ``x[start : start + size]`` on every axis."""
    starts = tuple(int(s) for s in starts)
    sizes = tuple(int(s) for s in sizes)
    if len(starts) != x.ndim or len(sizes) != x.ndim:
        raise ShapeError("crop: starts/sizes must cover every axis")
    for st, sz, e in zip(starts, sizes, x.shape):
        if st < 0 or sz < 0 or st + sz > e:
            raise ShapeError(f"crop: window {starts}+{sizes} exceeds shape {x.shape}")
    slices = tuple(slice(st, st + sz) for st, sz in zip(starts, sizes))
    data = x.data[slices]
    src = x.shape

    def bw(g):
        buf = np.zeros(src, dtype=g.dtype)
        buf[slices] = g
        return (buf,)

    return _make(data, (x,), bw, "crop")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    for t in tensors[1:]:
        _check_dtypes(tensors[0], t, "concat")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            grads.append(g[tuple(idx)] if t.requires_grad else None)
        return tuple(grads)

    return _make(data, tuple(tensors), bw, "concat")


def split(x: Tensor, sizes, axis: int):
    """Partition an axis into consecutive chunks; inverse of :func:`concat`."""
    sizes = [int(s) for s in sizes]
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {sizes} do not cover axis extent {x.shape[axis]}")
    outs = []
    start = 0
    for sz in sizes:
        starts = [0] * x.ndim
        extents = list(x.shape)
        starts[axis] = start
        extents[axis] = sz
        outs.append(crop(x, starts, extents))
        start += sz
    return tuple(outs)


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Look up rows of a ``(rows, width)`` table by an integer index array."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows: index must be integer-valued")
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-d, got {table.shape}")
    rows, width = table.shape
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise ShapeError("gather_rows: index out of range")
    data = table.data[idx]

    def bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx.reshape(-1), g.reshape(-1, width))
        return (buf,)

    return _make(data, (table,), bw, "gather")


# -- reductions ----------------------------------------------------------------


def _reduction_axes(x: Tensor, axis):
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        return (axis % x.ndim,)
    return tuple(a % x.ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _reduction_axes(x, axis)
    data = x.data.sum(axis=axes, keepdims=keepdims)
    src = x.shape

    def bw(g):
        if not keepdims:
            expand = list(g.shape)
            for a in sorted(axes):
                expand.insert(a, 1)
            g = g.reshape(expand)
        return (np.broadcast_to(g, src).astype(g.dtype, copy=False),)

    return _make(data, (x,), bw, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _reduction_axes(x, axis)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)
