"""Dense-tensor arithmetic with reverse-mode differentiation.

Row-major numpy storage, define-by-run recording, 32-bit scalars by default
with 64-bit selectable per tensor (gradient checks run whole graphs at
64-bit). Single-threaded per graph; identical inputs give bit-identical
outputs on one platform.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_finite_checks = False
# Debug hook for mutation-testing the gradient checker: scales the silu
# adjoint so a corrupted backward pass is demonstrably caught. Only the
# gradcheck CLI and its tests may touch this.
_silu_adjoint_scale = 1.0


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_finite_checks(enabled: bool) -> None:
    """Debug mode: every op output is checked for NaN/Inf."""
    global _finite_checks
    _finite_checks = bool(enabled)


def _set_silu_adjoint_corruption(scale: float) -> None:
    global _silu_adjoint_scale
    _silu_adjoint_scale = float(scale)


class Tensor:
    """N-dimensional real array with an optional gradient slot.

    Arithmetic between tensors records the operation so that
    ``backward()`` on a downstream scalar can replay adjoints in reverse.
    Gradients accumulate into ``.grad`` (a plain ndarray of identical
    shape) on every leaf with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_is_leaf", "_tape_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._is_leaf = True
        self._tape_consumed = False

    # ------------------------------------------------------------------
    # basic introspection
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    # ------------------------------------------------------------------
    # gradient plumbing
    def _accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        out._is_leaf = True
        out._tape_consumed = False
        return out

    def backward(self) -> None:
        """Replay recorded adjoints from this scalar back to all leaves.

        Each recorded operation is visited exactly once; the tape is
        released afterwards, so a second call without a fresh forward
        pass raises ``StateError``.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        if self._tape_consumed:
            raise StateError("backward called twice on the same recorded graph")

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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        # release intermediates, keep leaf gradients
        for node in topo:
            if not node._is_leaf:
                node._parents = ()
                node._backward_fn = None
                node.grad = None
        self._tape_consumed = True

    # ------------------------------------------------------------------
    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and
                       isinstance(shape[0], (tuple, list)) else shape)


def make_op(data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    """Wrap a computed array as a recorded operation output."""
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a tensor operation")
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = req
    out._parents = tuple(parents) if req else ()
    out._backward_fn = backward_fn if req else None
    out._is_leaf = not req
    out._tape_consumed = False
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic (broadcast-aware)

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_op(data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(-g, b.data.shape))

    return make_op(data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_op(data, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data),
                                            b.data.shape))

    return make_op(data, (a, b), bwd)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** p

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * p * a.data ** (p - 1.0))

    return make_op(data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g / (2.0 * data))

    return make_op(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * data)

    return make_op(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g / a.data)

    return make_op(data, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * inside)

    return make_op(data, (a,), bwd)


# ----------------------------------------------------------------------
# activations

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * mask)

    return make_op(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # stable split form: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * data * (1.0 - data))

    return make_op(data, (a,), bwd)


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype)
    data = x * s

    def bwd(g):
        if a.requires_grad:
            d = s * (1.0 + x * (1.0 - s))
            if _silu_adjoint_scale != 1.0:
                d = d * _silu_adjoint_scale
            a._accumulate_grad(g * d)

    return make_op(data, (a,), bwd)


def activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: relu, silu, or sigmoid."""
    try:
        return {"relu": relu, "silu": silu, "sigmoid": sigmoid}[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


# ----------------------------------------------------------------------
# reductions and shape ops

def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g
            if axes is not None and not keepdims:
                gg = np.expand_dims(g, axes)
            a._accumulate_grad(np.broadcast_to(gg, a.data.shape))

    return make_op(data, (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g.reshape(a.data.shape))

    return make_op(data, (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ValueError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._accumulate_grad(g[tuple(sl)])

    return make_op(data, ts, bwd)
