"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array and, when gradients are required, records
the closure that propagates an upstream gradient to its parents.  Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order and accumulates ``.grad`` on every leaf that asked for it.

The engine runs in float64 by default so that finite-difference gradient
checks are meaningful; float32 can be selected globally for speed via
``set_float_width(32)``.  Every forward op verifies that finite inputs
produced finite outputs and raises ``NumericError`` otherwise (switchable
through ``config.check_finite``).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError


@dataclass
class EngineConfig:
    dtype: type = np.float64
    check_finite: bool = True


config = EngineConfig()


def default_dtype():
    return config.dtype


def set_float_width(bits: int) -> None:
    """Select 64-bit (default) or 32-bit floats for newly created tensors."""
    if bits == 64:
        config.dtype = np.float64
    elif bits == 32:
        config.dtype = np.float32
    else:
        raise ValueError(f"float width must be 32 or 64, got {bits}")


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if config.check_finite and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node of the differentiation graph.

    ``data`` is always a numpy array of the engine dtype; ``grad`` is filled
    by ``backward()`` for nodes with ``requires_grad``.  Graphs are single
    use: after a backward pass the recorded closures are dropped and a second
    backward on the same root raises.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=config.dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = _parents
        self._op = _op
        self._consumed = False

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=config.dtype), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape, dtype=config.dtype), requires_grad)

    @staticmethod
    def from_op(data: np.ndarray, parents, op: str, backward=None) -> "Tensor":
        """Wrap an op result, recording `backward` only while grads are on.

        `backward` receives the upstream gradient array and must accumulate
        into the parents' ``.grad`` buffers via ``accumulate_grad``.
        """
        _check_finite(np.asarray(data), op)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track, _parents=tuple(parents) if track else (), _op=op)
        if track:
            out._backward = backward
        return out

    # -- basic protocol -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        Populates ``.grad`` on every reachable tensor with
        ``requires_grad``.  The graph is released afterwards; running
        backward twice through the same nodes is an error.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward() called twice on the same graph")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that is detached from any graph")

        order = []
        visited = set()
        stack = [(self, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._consumed:
                raise RuntimeError("backward() reached a node whose graph was already consumed")
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._consumed = node._backward is not None or node is self
            # release the closure so intermediate buffers can be collected
            node._backward = None
            node._parents = ()

    # -- elementwise arithmetic ------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g):
            self.accumulate_grad(unbroadcast(g, self.data.shape))
            other.accumulate_grad(unbroadcast(g, other.data.shape))

        return Tensor.from_op(out_data, (self, other), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self.accumulate_grad(-g)

        return Tensor.from_op(-self.data, (self,), "neg", backward)

    def __sub__(self, other):
        other = self._coerce(other)
        out_data = self.data - other.data

        def backward(g):
            self.accumulate_grad(unbroadcast(g, self.data.shape))
            other.accumulate_grad(unbroadcast(-g, other.data.shape))

        return Tensor.from_op(out_data, (self, other), "sub", backward)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g):
            self.accumulate_grad(unbroadcast(g * other.data, self.data.shape))
            other.accumulate_grad(unbroadcast(g * self.data, other.data.shape))

        return Tensor.from_op(out_data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out_data = self.data / other.data

        def backward(g):
            self.accumulate_grad(unbroadcast(g / other.data, self.data.shape))
            other.accumulate_grad(
                unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
            )

        return Tensor.from_op(out_data, (self, other), "div", backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data**exponent

        def backward(g):
            self.accumulate_grad(g * exponent * self.data ** (exponent - 1))

        return Tensor.from_op(out_data, (self,), "pow", backward)

    # -- elementwise functions ---------------------------------------------------

    def abs(self):
        def backward(g):
            # subgradient at 0 fixed to 0
            self.accumulate_grad(g * np.sign(self.data))

        return Tensor.from_op(np.abs(self.data), (self,), "abs", backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self.accumulate_grad(g * out_data)

        return Tensor.from_op(out_data, (self,), "exp", backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            self.accumulate_grad(g / self.data)

        return Tensor.from_op(out_data, (self,), "log", backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self.accumulate_grad(g * 0.5 / out_data)

        return Tensor.from_op(out_data, (self,), "sqrt", backward)

    def sin(self):
        def backward(g):
            self.accumulate_grad(g * np.cos(self.data))

        return Tensor.from_op(np.sin(self.data), (self,), "sin", backward)

    def cos(self):
        def backward(g):
            self.accumulate_grad(-g * np.sin(self.data))

        return Tensor.from_op(np.cos(self.data), (self,), "cos", backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self.accumulate_grad(g * (1.0 - out_data * out_data))

        return Tensor.from_op(out_data, (self,), "tanh", backward)

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g):
            self.accumulate_grad(g * out_data * (1.0 - out_data))

        return Tensor.from_op(out_data, (self,), "sigmoid", backward)

    def relu(self):
        def backward(g):
            self.accumulate_grad(g * (self.data > 0))

        return Tensor.from_op(np.maximum(self.data, 0.0), (self,), "relu", backward)

    def leaky_relu(self, slope: float = 0.2):
        x = self.data

        def backward(g):
            self.accumulate_grad(g * np.where(x > 0, 1.0, slope))

        return Tensor.from_op(np.where(x > 0, x, slope * x), (self,), "leaky_relu", backward)

    def clamp(self, low=None, high=None):
        """Clip values; gradient passes only where unclipped."""
        out_data = np.clip(self.data, low, high)
        passthrough = np.ones_like(self.data)
        if low is not None:
            passthrough *= self.data >= low
        if high is not None:
            passthrough *= self.data <= high

        def backward(g):
            self.accumulate_grad(g * passthrough)

        return Tensor.from_op(out_data, (self,), "clamp", backward)

    # -- reductions -----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self.accumulate_grad(np.broadcast_to(g, self.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate_grad(np.broadcast_to(g, self.data.shape).copy())

        return Tensor.from_op(out_data, (self,), "sum", backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- linear algebra ----------------------------------------------------------------

    def matmul(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
        out_data = a @ b

        def backward(g):
            self.accumulate_grad(g @ b.T)
            other.accumulate_grad(a.T @ g)

        return Tensor.from_op(out_data, (self, other), "matmul", backward)

    __matmul__ = matmul

    # -- shape manipulation ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        in_shape = self.data.shape

        def backward(g):
            self.accumulate_grad(g.reshape(in_shape))

        return Tensor.from_op(out_data, (self,), "reshape", backward)

    def transpose(self, axes=None):
        out_data = np.transpose(self.data, axes)
        inverse = None if axes is None else np.argsort(axes)

        def backward(g):
            self.accumulate_grad(np.transpose(g, inverse))

        return Tensor.from_op(out_data, (self,), "transpose", backward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out_data = self.data[idx]
        advanced = isinstance(idx, (np.ndarray, list)) or (
            isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx)
        )

        def backward(g):
            if not self.requires_grad:
                return
            buf = np.zeros_like(self.data)
            if advanced:
                np.add.at(buf, idx, g)
            else:
                buf[idx] = g
            self.accumulate_grad(buf)

        return Tensor.from_op(out_data, (self,), "getitem", backward)

    @staticmethod
    def stack(tensors, axis: int = 0):
        tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
        out_data = np.stack([t.data for t in tensors], axis=axis)

        def backward(g):
            for i, t in enumerate(tensors):
                t.accumulate_grad(np.take(g, i, axis=axis))

        return Tensor.from_op(out_data, tensors, "stack", backward)

    @staticmethod
    def concat(tensors, axis: int = 0):
        tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

        return Tensor.from_op(out_data, tensors, "concat", backward)
