"""Dense tensors with a small reverse-mode autograd tape.

Every differentiable operation records a :class:`TapeNode` on its output. The
nodes carry a global creation index, so :func:`backward` can walk the reachable
sub-graph in reverse creation order, which is a valid reverse topological order
because a node can only consume tensors that already exist.

Broadcasting is deliberately absent: apart from :func:`add_bias`, operands of
binary ops must have identical shapes.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_creation_counter = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class TapeNode:
    """One recorded operation: which op, its inputs and how to differentiate it."""

    __slots__ = ("op", "inputs", "backward_fn", "order")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.order = next(_creation_counter)

    def __repr__(self) -> str:
        return f"TapeNode(op={self.op!r}, order={self.order})"


class Tensor:
    """N-dimensional row-major float array that can participate in autograd.

    Args:
        data: array-like. Float64 input stays float64; everything else becomes
            float32 unless ``dtype`` is given.
        requires_grad: record operations on this tensor so gradients can flow
            back into it.
        dtype: ``np.float32`` or ``np.float64``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = np.float64 if arr.dtype == np.float64 else np.float32
        dtype = np.dtype(dtype)
        if dtype not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            raise DimensionError("zero-dimensional tensors are not supported; use shape (1,)")
        arr = np.ascontiguousarray(arr)
        if 0 in arr.shape:
            raise DimensionError(f"every extent must be >= 1, got {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[TapeNode] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def relu(self):
        return relu(self)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=like.dtype)


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` in a Tensor and, if any input needs gradients, tape it.

    ``backward_fn`` receives the upstream gradient and returns one gradient (or
    ``None``) per input, in order.
    """
    out = Tensor(data, dtype=data.dtype)
    inputs = tuple(inputs)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, inputs, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor that requires gradients.

    Gradients accumulate across calls; use :meth:`Tensor.zero_grad` (or
    ``Module.zero_grad``) between optimisation steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    # collect the reachable sub-graph
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        if t._node is not None:
            stack.extend(inp for inp in t._node.inputs if inp.requires_grad)

    interior = sorted((t for t in seen.values() if t._node is not None),
                      key=lambda t: t._node.order, reverse=True)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for t in interior:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        node = t._node
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ContractError(f"{node.op}: gradient shape {ig.shape} != input shape {inp.shape}")
            key = id(inp)
            grads[key] = ig if key not in grads else grads[key] + ig

    for key, g in grads.items():
        t = seen[key]
        g = g.astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


# -- elementwise -----------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    _check_same_dtype(a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    _check_same_dtype(a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def add_bias(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a per-channel ``bias`` of shape ``(C,)`` along ``axis`` of ``x``."""
    axis = axis % x.ndim
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise DimensionError(f"bias shape {bias.shape} does not match axis {axis} of {x.shape}")
    _check_same_dtype(x, bias)
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return record("add_bias", x.data + bias.data.reshape(view), (x, bias),
                  lambda g: (g, g.sum(axis=others)))


# -- reductions ------------------------------------------------------------
def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return record("sum", np.asarray([a.data.sum()], dtype=a.dtype), (a,),
                  lambda g: (np.full(shape, g[0], dtype=g.dtype),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return record("mean", np.asarray([a.data.mean()], dtype=a.dtype), (a,),
                  lambda g: (np.full(shape, g[0] / n, dtype=g.dtype),))


# -- shape manipulation ------------------------------------------------------
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc
    src = a.shape
    return record("reshape", out, (a,), lambda g: (g.reshape(src),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"axes {axes} are not a permutation of {a.ndim} dims")
    inv = tuple(np.argsort(axes))
    return record("permute", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                  lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; every other extent must agree."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty list")
    _check_same_dtype(*tensors)
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(f"concat: {t.shape} incompatible with {ref.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def gather(a: Tensor, index: np.ndarray, axis: int = -1, inverse: Optional[np.ndarray] = None) -> Tensor:
    """``out[..., i, ...] = a[..., index[i], ...]`` along ``axis``.

    When ``index`` is a permutation, passing its ``inverse`` makes the backward
    pass a second gather instead of a scatter-add.
    """
    axis = axis % a.ndim
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise DimensionError("gather index must be one-dimensional")
    src = a.shape
    out = np.take(a.data, index, axis=axis)

    def _backward(g):
        if inverse is not None:
            return (np.take(g, inverse, axis=axis),)
        gx = np.zeros(src, dtype=g.dtype)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (gx,)

    return record("gather", out, (a,), _backward)


# -- linear algebra ----------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul supports 2-D operands only")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    return record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tensors_checksum(tensors: Iterable[Tensor]) -> float:
    """Order-sensitive float checksum, handy for comparing weight sets."""
    total = 0.0
    for i, t in enumerate(tensors, start=1):
        total += i * float(np.sum(t.data, dtype=np.float64))
    return total
