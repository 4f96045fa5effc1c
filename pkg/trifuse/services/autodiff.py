"""
Autodiff Service
Reverse-mode differentiation over numpy arrays

A ``Tensor`` records the op that produced it and a closure that pushes its
gradient to its parents. ``backward`` walks the recorded graph in reverse
topological order. Production runs use float32; ``precision(np.float64)``
exists for finite-difference checks.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from trifuse.core.exceptions import AutodiffError, ShapeError

_dtype: ContextVar[type] = ContextVar("trifuse_dtype", default=np.float32)
_grad_enabled: ContextVar[bool] = ContextVar("trifuse_grad_enabled", default=True)

ArrayLike = Union["Tensor", np.ndarray, float, int]


def default_dtype() -> type:
    return _dtype.get()


@contextmanager
def precision(dtype: type) -> Iterator[None]:
    """Run the enclosed block with ``dtype`` as the default tensor dtype"""
    token = _dtype.set(dtype)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Do not record the graph inside the block (inference)"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """Array node of the computation graph"""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[type] = None,
    ):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g), self.data.shape).astype(self.data.dtype, copy=False)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # -- operators --------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    if g.shape != shape:
        raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")
    return g


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    """Wrap an op result, recording the graph only when some parent needs it"""
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _result_dtype(*tensors: Tensor) -> type:
    return np.result_type(*(t.data.dtype for t in tensors))


# -- elementwise -------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return make_node((a.data + b.data).astype(_result_dtype(a, b), copy=False), (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(-g)

    return make_node((a.data - b.data).astype(_result_dtype(a, b), copy=False), (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return make_node((a.data * b.data).astype(_result_dtype(a, b), copy=False), (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g / b.data)
        b.accumulate(-g * a.data / (b.data * b.data))

    return make_node((a.data / b.data).astype(_result_dtype(a, b), copy=False), (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x.accumulate(g * p * np.power(x.data, p - 1))

    return make_node(np.power(x.data, p), (x,), backward, "pow")


def absolute(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x.accumulate(g * np.sign(x.data))

    return make_node(np.abs(x.data), (x,), backward, "abs")


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken as 0"""
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return make_node(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), backward, "relu")


# -- reductions and structure ------------------------------------------------

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.data.shape))

    return make_node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.data.shape[a] for a in np.atleast_1d(axis)]))
    return mul(reduce_sum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.data.shape))

    return make_node(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.transpose(g, inverse))

    return make_node(np.transpose(x.data, axes), (x,), backward, "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def take(x: Tensor, index) -> Tensor:
    """Basic (slice) indexing"""
    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[index] += g
        x.accumulate(full)

    return make_node(np.array(x.data[index]), (x,), backward, "take")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"cannot concatenate shapes {[p.shape for p in parts]} on axis {axis}") from e
    bounds = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray) -> None:
        for part, piece in zip(parts, np.split(g, bounds, axis=axis)):
            part.accumulate(piece)

    return make_node(data, parts, backward, "concat")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction"""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x.accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return make_node(s, (x,), backward, "softmax")


# -- graph traversal -----------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    state = {}
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        if state.get(key) == 2:
            continue
        if state.get(key) == 1:
            raise AutodiffError(f"cycle detected at {node!r}")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            pstate = state.get(id(parent))
            if pstate == 1:
                raise AutodiffError(f"cycle detected between {node!r} and {parent!r}")
            if pstate is None and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None, accumulate: bool = False) -> None:
    """
    Populate ``.grad`` on every leaf that requires it

    Args:
        loss: Scalar node
        params: Parameters whose gradient must exist afterwards (zeros when
            the loss does not depend on them)
        accumulate: Add to existing leaf gradients instead of refusing

    Raises:
        AutodiffError: non-scalar loss, stale gradients without
            ``accumulate``, or a cyclic graph
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else []

    if not accumulate:
        stale = [p for p in params if p.grad is not None]
        if stale:
            names = ", ".join(p.name or repr(p) for p in stale[:3])
            raise AutodiffError(f"gradients already populated ({names}); zero them or pass accumulate=True")

    if loss.requires_grad:
        order = _topological_order(loss)
        if not accumulate:
            for node in order:
                if node.is_leaf and node.grad is not None:
                    raise AutodiffError(
                        f"gradient of {node.name or node!r} already populated; zero it or pass accumulate=True"
                    )
        for node in order:
            if not node.is_leaf:
                node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
