"""Dense tensor with a define-by-run reverse-mode tape.

Every differentiable op builds a new :class:`Tensor` whose ``_parents`` point
at its inputs and whose ``_backward`` closure maps the output gradient to one
gradient per parent. Nodes carry a monotonically increasing id, so sorting the
reachable set by id gives a valid topological order without a DFS stack.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

_DTYPE = np.float64
_ids = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Incompatible shapes or an out-of-range axis."""


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class GradientError(RuntimeError):
    """backward() called on something it cannot differentiate."""


def set_default_dtype(dtype) -> None:
    """Switch the storage precision. float32 exists for benchmarking only."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=_DTYPE)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._id = next(_ids)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise DimensionError(f"tensor of shape {self.shape} is not a scalar")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- backward ---------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate ``.grad`` on every reachable tensor that requires grad.

        Gradients accumulate, so a tensor used twice receives the sum of both
        contributions, and calling backward twice without ``zero_grad`` adds.
        """
        if grad is None and self.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GradientError("loss is detached from the tape (requires_grad=False)")

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        order = sorted(nodes.values(), key=lambda t: t._id, reverse=True)

        seed = np.ones_like(self.data) if grad is None else _as_array(grad).reshape(self.shape)
        pending = {self._id: seed}
        for node in order:
            g = pending.pop(node._id, None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent._id)
                pending[parent._id] = pg if prev is None else prev + pg

    # -- operator sugar ---------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

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


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Record an op result on the tape (when any parent needs a gradient)."""
    _check_finite(data, op)
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires
    out.grad = None
    out.name = None
    out._id = next(_ids)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# -- elementwise arithmetic ------------------------------------------------

def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_node(a.data**exponent, (a,), backward, "power")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, which keeps gradchecks clean."""
    a = _wrap(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    half_1pt = 0.5 * (1.0 + t)
    out = x * half_1pt

    def backward(g):
        d_inner = _GELU_C * (1.0 + 0.134145 * x2)
        return (g * (half_1pt + 0.5 * x * (1.0 - t * t) * d_inner),)

    return make_node(out, (a,), backward, "gelu")


def maximum(a, b) -> Tensor:
    """Element-wise max. Ties route the gradient to ``a``."""
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b, "maximum")
    take_a = a.data >= b.data

    def backward(g):
        return unbroadcast(g * take_a, a.shape), unbroadcast(g * ~take_a, b.shape)

    return make_node(np.where(take_a, a.data, b.data), (a, b), backward, "maximum")


max_elementwise = maximum


# -- reductions -------------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def _expand_reduced(g: np.ndarray, shape: tuple, axes, keepdims: bool) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axes, keepdims)),)

    return make_node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    out = np.mean(a.data, axis=axes, keepdims=keepdims)

    def backward(g):
        return (_expand_reduced(g, a.shape, axes, keepdims) / count,)

    return make_node(np.asarray(out), (a,), backward, "mean")


def variance(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (divide by n)."""
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    centered = a.data - np.mean(a.data, axis=axes, keepdims=True)
    out = np.mean(centered**2, axis=axes, keepdims=keepdims)

    def backward(g):
        return (_expand_reduced(g, a.shape, axes, keepdims) * (2.0 / count) * centered,)

    return make_node(np.asarray(out), (a,), backward, "variance")


def _extreme(a, fn, op: str) -> Tensor:
    a = _wrap(a)
    flat = a.data.reshape(-1)
    idx = int(fn(flat))

    def backward(g):
        out = np.zeros(a.size, dtype=a.data.dtype)
        out[idx] = g
        return (out.reshape(a.shape),)

    return make_node(np.asarray(flat[idx]), (a,), backward, op)


def amax(a) -> Tensor:
    """Global max; gradient goes to the first arg-max."""
    return _extreme(a, np.argmax, "amax")


def amin(a) -> Tensor:
    return _extreme(a, np.argmin, "amin")


# -- shape ops ------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = _wrap(a)
    out = a.data[index]

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(out), (a,), backward, "getitem")


def _is_basic_index(index) -> bool:
    """True when indexing cannot hit the same element twice (no index arrays)."""
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    ax = _norm_axis(axis, tensors[0].ndim)[0]
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return make_node(out, tensors, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matmul with numpy broadcasting over leading dims (both >= 2-D)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "matmul")
