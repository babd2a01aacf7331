"""
Reverse-mode differentiation on numpy buffers.

A DTensor wraps an ndarray. While a Tape is active (``with Tape() as tape:``)
every op whose inputs require gradients records a node holding its inputs,
its output and a backward rule. ``tape.backward(loss)`` walks the nodes in
reverse recording order, which is a reverse topological order because a node
is always recorded after the nodes producing its inputs.
"""

import contextlib
import logging
from contextvars import ContextVar
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import runtime
from app.core.errors import DomainError, NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["DTensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)
_DEFAULT_DTYPE: ContextVar[np.dtype] = ContextVar("default_dtype", default=np.dtype(np.float64))
_DEBUG: ContextVar[bool] = ContextVar("debug_checks", default=runtime.DIFFMATH_DEBUG)

LOGIT_EPS = 1e-3


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE.get()


def set_default_dtype(dtype) -> None:
    _DEFAULT_DTYPE.set(np.dtype(dtype))


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Temporarily switch the dtype used for new tensors and parameters"""
    token = _DEFAULT_DTYPE.set(np.dtype(dtype))
    try:
        yield _DEFAULT_DTYPE.get()
    finally:
        _DEFAULT_DTYPE.reset(token)


def set_debug(enabled: bool) -> None:
    _DEBUG.set(bool(enabled))


@contextlib.contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    token = _DEBUG.set(enabled)
    try:
        yield
    finally:
        _DEBUG.reset(token)


class DTensor:
    """Numeric buffer with an optional gradient"""

    __slots__ = ("values", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(values, dtype=dtype or get_default_dtype())
        self.values = np.ascontiguousarray(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise DomainError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "DTensor":
        return DTensor(self.values, dtype=self.values.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ShapeError("accumulate", [grad.shape, self.values.shape])
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.values.dtype, copy=True)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"DTensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.values.shape[0]

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, exponent): return power(self, exponent)
    def __getitem__(self, index): return getitem(self, index)

    # method forms
    def sum(self, axis=None, keepdims: bool = False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return reduce_mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))
    def relu(self): return relu(self)
    def sigmoid(self): return sigmoid(self)
    def exp(self): return exp(self)
    def log(self): return log(self)


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[DTensor], output: DTensor, backward_fn: BackwardFn):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Records differentiable ops while active"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._consumed = False
        self._tokens = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that has already run backward; call reset()")
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    def backward(self, loss: DTensor) -> None:
        """Accumulate d(loss)/d(input) into the grad of every recorded input"""
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() before reuse")
        if loss.size != 1:
            raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.accumulate(np.ones_like(loss.values))
        for node in reversed(self.nodes):
            upstream = node.output.grad
            if upstream is None:
                continue
            grads = node.backward_fn(upstream)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.accumulate(np.asarray(grad, dtype=tensor.values.dtype).reshape(tensor.shape))
        logger.debug(f"backward over {len(self.nodes)} nodes")


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Evaluate ops without recording them on the active tape"""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def as_tensor(value: ArrayLike, dtype=None) -> DTensor:
    if isinstance(value, DTensor):
        return value
    return DTensor(value, dtype=dtype)


def apply_op(op: str, values: np.ndarray, inputs: Sequence[DTensor], backward_fn: BackwardFn) -> DTensor:
    """Wrap an op result and record it when any input needs gradients"""
    out = DTensor(values, dtype=np.asarray(values).dtype)
    if _DEBUG.get() and not np.all(np.isfinite(out.values)):
        raise NonFiniteError(op, out.shape)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: DTensor, b: DTensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape]) from None


def _pair(op: str, a: ArrayLike, b: ArrayLike) -> Tuple[DTensor, DTensor]:
    if isinstance(a, DTensor) and not isinstance(b, DTensor):
        b = DTensor(b, dtype=a.dtype)
    elif isinstance(b, DTensor) and not isinstance(a, DTensor):
        a = DTensor(a, dtype=b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(op, a, b)
    return a, b


# elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> DTensor:
    a, b = _pair("add", a, b)
    return apply_op("add", a.values + b.values, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> DTensor:
    a, b = _pair("sub", a, b)
    return apply_op("sub", a.values - b.values, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> DTensor:
    a, b = _pair("mul", a, b)
    return apply_op("mul", a.values * b.values, (a, b),
                    lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> DTensor:
    a, b = _pair("div", a, b)
    out = a.values / b.values
    return apply_op("div", out, (a, b),
                    lambda g: (_unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)))


def scale(x: DTensor, factor: float) -> DTensor:
    factor = float(factor)
    return apply_op("scale", x.values * factor, (x,), lambda g: (g * factor,))


def power(x: DTensor, exponent: float) -> DTensor:
    exponent = float(exponent)
    return apply_op("pow", np.power(x.values, exponent), (x,),
                    lambda g: (g * exponent * np.power(x.values, exponent - 1.0),))


def matmul(a: ArrayLike, b: ArrayLike) -> DTensor:
    """Batched matrix product over the last two axes with broadcasting batch dims"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", [a.shape, b.shape])
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", [a.shape, b.shape], "batch dims") from None

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.values, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return apply_op("matmul", np.matmul(a.values, b.values), (a, b), backward)


# nonlinearities

def relu(x: DTensor) -> DTensor:
    mask = x.values > 0
    return apply_op("relu", np.where(mask, x.values, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype)


def sigmoid(x: DTensor) -> DTensor:
    out = _stable_sigmoid(x.values)
    return apply_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x: DTensor) -> DTensor:
    v = x.values
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return apply_op("log_sigmoid", out, (x,), lambda g: (g * _stable_sigmoid(-v),))


def logit(x: DTensor, eps: float = LOGIT_EPS) -> DTensor:
    """Inverse sigmoid with inputs clamped to [eps, 1 - eps]"""
    inside = (x.values >= eps) & (x.values <= 1.0 - eps)
    c = np.clip(x.values, eps, 1.0 - eps)
    out = np.log(c) - np.log1p(-c)
    return apply_op("logit", out, (x,), lambda g: (g * inside / (c * (1.0 - c)),))


def exp(x: DTensor) -> DTensor:
    out = np.exp(x.values)
    return apply_op("exp", out, (x,), lambda g: (g * out,))


def log(x: DTensor) -> DTensor:
    if np.any(x.values <= 0):
        raise DomainError("log of non-positive value")
    return apply_op("log", np.log(x.values), (x,), lambda g: (g / x.values,))


def absolute(x: DTensor) -> DTensor:
    return apply_op("abs", np.abs(x.values), (x,), lambda g: (g * np.sign(x.values),))


# shape ops

def reshape(x: DTensor, shape) -> DTensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", [x.shape, shape]) from None
    return apply_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: DTensor, axes=None) -> DTensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", [x.shape], f"axes {axes}")
    inverse = tuple(np.argsort(axes))
    return apply_op("transpose", np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x: DTensor, a: int, b: int) -> DTensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def broadcast_to(x: DTensor, shape) -> DTensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.values, shape)
    except ValueError:
        raise ShapeError("broadcast_to", [x.shape, shape]) from None
    return apply_op("broadcast_to", np.ascontiguousarray(out), (x,), lambda g: (_unbroadcast(g, x.shape),))


def getitem(x: DTensor, index) -> DTensor:
    """Slice or gather; repeated gather indices accumulate their gradients"""
    if isinstance(index, DTensor):
        index = index.values.astype(np.int64)
    out = x.values[index]

    def backward(g):
        grad = np.zeros_like(x.values)
        np.add.at(grad, index, g)
        return (grad,)

    return apply_op("getitem", np.array(out, copy=True), (x,), backward)


def concat(tensors: Sequence[DTensor], axis: int = 0) -> DTensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", [t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[DTensor], axis: int = 0) -> DTensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", [t.shape for t in tensors])
    out = np.stack([t.values for t in tensors], axis=axis)
    return apply_op("stack", out, tensors,
                    lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


# reductions

def reduce_sum(x: DTensor, axis=None, keepdims: bool = False) -> DTensor:
    out = np.sum(x.values, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return apply_op("sum", np.asarray(out, dtype=x.dtype), (x,), backward)


def reduce_mean(x: DTensor, axis=None, keepdims: bool = False) -> DTensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis, keepdims), 1.0 / max(count, 1))
