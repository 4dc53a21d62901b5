"""
Dense tensors with reverse-mode gradients.

A ``Tensor`` wraps a row-major numpy array. Every differentiable operation on
tensors that require gradients records its parents and a gradient function;
``backward`` walks that recorded graph from a scalar loss and accumulates
gradients into the leaves (``Parameter`` objects and any user tensor created
with ``requires_grad=True``).

Storage defaults to 32-bit reals. ``precision(np.float64)`` switches newly
created tensors and parameters to 64-bit, which the gradient checks use.
Graph recording is confined to the calling thread; ``no_grad`` disables it.
"""
import threading
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Sequence

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from tokentrack.errors import ContractError, DimensionError, UnsupportedKernelError

Array = npt.NDArray[np.floating[Any]]
GradFn = Callable[[Array], Sequence[Array | None]]

_default_dtype: type[np.floating[Any]] = np.float32
_grad_state = threading.local()


# --- Precision and grad mode ---

def get_default_dtype() -> type[np.floating[Any]]:
    return _default_dtype


def set_default_dtype(dtype: type[np.floating[Any]]) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported tensor dtype {dtype}; use numpy.float32 or numpy.float64")
    _default_dtype = dtype


@contextmanager
def precision(dtype: type[np.floating[Any]]) -> Iterator[None]:
    """Create tensors and parameters in ``dtype`` inside the block."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward computations without recording a graph (this thread only)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(data: Any) -> Array:
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data
    return np.asarray(data, dtype=_default_dtype)


def _unbroadcast(target_shape: tuple[int, ...], grad: Array) -> Array:
    """Sum ``grad`` over the axes that broadcasting expanded from ``target_shape``."""
    while grad.ndim > len(target_shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(target_shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    data: Array
    requires_grad: bool
    grad: Array | None

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        _parents: tuple["Tensor", ...] = (),
        _grad_fn: GradFn | None = None,
        name: str | None = None,
    ):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._grad_fn = _grad_fn
        self.name = name

    # --- Introspection ---
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
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, no gradient linkage."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self) -> None:
        backward(self)

    # --- Operators ---
    def _lift(self, other: "Tensor | float | int") -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other: "Tensor | float | int") -> "Tensor":
        return add(self, self._lift(other))

    def __radd__(self, other: float | int) -> "Tensor":
        return add(self._lift(other), self)

    def __sub__(self, other: "Tensor | float | int") -> "Tensor":
        return sub(self, self._lift(other))

    def __rsub__(self, other: float | int) -> "Tensor":
        return sub(self._lift(other), self)

    def __mul__(self, other: "Tensor | float | int") -> "Tensor":
        return mul(self, self._lift(other))

    def __rmul__(self, other: float | int) -> "Tensor":
        return mul(self._lift(other), self)

    def __truediv__(self, other: "Tensor | float | int") -> "Tensor":
        return div(self, self._lift(other))

    def __rtruediv__(self, other: float | int) -> "Tensor":
        return div(self._lift(other), self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    # --- Method forms ---
    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


class Parameter(Tensor):
    """Leaf tensor owned by a module; ``grad`` always has the value's shape."""

    grad: Array

    def __init__(self, data: Any, trainable: bool = True, name: str | None = None):
        super().__init__(np.array(data, dtype=_default_dtype), requires_grad=trainable, name=name)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def assign(self, values: Any) -> None:
        """Replace the value, keeping this parameter's shape and dtype."""
        array = np.asarray(values)
        if array.shape != self.data.shape:
            raise DimensionError(f"cannot assign shape {array.shape} to parameter of shape {self.data.shape}")
        self.data = array.astype(self.data.dtype, copy=True)

    def astype(self, dtype: type[np.floating[Any]]) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, trainable={self.trainable}{label})"


def tensor(data: Any, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=_default_dtype), requires_grad=requires_grad)


def _result(data: Array, parents: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _grad_fn=grad_fn)
    return Tensor(data)


# --- Graph traversal ---

def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require gradients, inputs before outputs."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward on a tensor with no recorded graph")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            g = np.asarray(g, dtype=node.data.dtype).reshape(node.data.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._grad_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


# --- Elementwise arithmetic ---

def add(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(a.shape, g), _unbroadcast(b.shape, g)
    return _result(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(a.shape, g), _unbroadcast(b.shape, -g)
    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(a.shape, g * b.data), _unbroadcast(b.shape, g * a.data)
    return _result(a.data * b.data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return (_unbroadcast(a.shape, g / b.data),
                _unbroadcast(b.shape, -g * a.data / (b.data * b.data)))
    return _result(a.data / b.data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array]:
        if exponent == 0:
            return (np.zeros_like(a.data),)
        return (g * exponent * np.power(a.data, exponent - 1),)
    return _result(np.power(a.data, exponent), (a,), grad_fn)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    mask = a.data >= b.data
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(a.shape, g * mask), _unbroadcast(b.shape, g * ~mask)
    return _result(np.maximum(a.data, b.data), (a, b), grad_fn)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    mask = a.data <= b.data
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(a.shape, g * mask), _unbroadcast(b.shape, g * ~mask)
    return _result(np.minimum(a.data, b.data), (a, b), grad_fn)


def clip(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# --- Unary functions ---

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _result(a.data * positive, (a,), lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so large magnitudes never overflow exp.
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    def grad_fn(g: Array) -> tuple[Array]:
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)
    return _result(out, (a,), grad_fn)


# --- Reductions and shape ---

def _axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    def grad_fn(g: Array) -> tuple[Array]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)
    return _result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), grad_fn)


def tensor_mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tensor_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index: Any) -> Tensor:
    def grad_fn(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _result(np.array(a.data[index]), (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != axis
        ):
            raise DimensionError(f"concat: shapes {[x.shape for x in tensors]} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    def grad_fn(g: Array) -> list[Array]:
        return np.split(g, splits, axis=axis)
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


# --- Linear algebra and neural-network primitives ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    def grad_fn(g: Array) -> tuple[Array, Array]:
        return (_unbroadcast(a.shape, g @ np.swapaxes(b.data, -1, -2)),
                _unbroadcast(b.shape, np.swapaxes(a.data, -1, -2) @ g))
    return _result(a.data @ b.data, (a, b), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    def grad_fn(g: Array) -> tuple[Array]:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return _result(out, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    def grad_fn(g: Array) -> tuple[Array, Array, Array]:
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta
    return _result(out, (x, gamma, beta), grad_fn)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, pad: int = 0) -> Tensor:
    """Stride-1 cross-correlation of ``x`` [C_in, H, W] with ``kernel`` [C_out, C_in, k, k]."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected x [C,H,W] and kernel [O,C,k,k], got {x.shape} and {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise UnsupportedKernelError(f"conv2d supports odd square kernels only, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
    k = kh
    height, width = x.shape[1], x.shape[2]
    if height + 2 * pad - k + 1 < 1 or width + 2 * pad - k + 1 < 1:
        raise DimensionError(f"conv2d: kernel {k} with pad {pad} does not fit input {x.shape}")

    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    out = np.tensordot(windows, kernel.data, axes=([0, 3, 4], [1, 2, 3])).transpose(2, 0, 1)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out)

    def grad_fn(g: Array) -> tuple[Array, Array, Array | None]:
        gkernel = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        gpad = np.pad(g, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        gwindows = sliding_window_view(gpad, (k, k), axis=(1, 2))
        flipped = kernel.data[:, :, ::-1, ::-1]
        gpadded = np.tensordot(gwindows, flipped, axes=([0, 3, 4], [0, 2, 3])).transpose(2, 0, 1)
        gx = gpadded[:, pad:pad + height, pad:pad + width]
        gbias = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gkernel, gbias

    parents: tuple[Tensor, ...] = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, grad_fn)
