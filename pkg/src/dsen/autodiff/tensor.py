"""Dense float64 tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Every differentiable operation records its
parents and a backward closure on the output; ``Tensor.backward()`` walks the
graph once in reverse topological order. The graph is confined to the thread
that builds it; separate graphs are independent.

All values are float64. Any op producing a non-finite value raises
``NumericError`` immediately rather than letting NaN propagate.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # One-pass reduction: any NaN/inf element drives the sum non-finite.
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite values produced by '{op}'")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in a reverse-mode computation graph.

    Attributes:
        data: float64 numpy array (row-major).
        requires_grad: whether gradients are accumulated into ``grad``.
        grad: gradient of the downstream scalar objective, same shape as
            ``data``; ``None`` until ``backward()`` reaches this node.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _check_finite(_as_array(values), "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- construction -----------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward_fn, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = _check_finite(np.asarray(data, dtype=np.float64), op)
        out.grad = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
            out._op = op
        else:
            out._parents = ()
            out._backward_fn = None
            out._op = op
        return out

    @staticmethod
    def lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # Copy: closures may hand the same buffer to several parents.
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate into leaves; interior nodes are reset first, so
        a second backward over a partially shared graph stays correct.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        for node in topo:
            if node._backward_fn is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor.lift(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._from_op(self.data + other.data, (self, other), backward, "add")

    def __mul__(self, other) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * b, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * a, other.shape))

        return Tensor._from_op(a * b, (self, other), backward, "mul")

    def __neg__(self) -> "Tensor":
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), backward, "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor.lift(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor.lift(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / b, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * a / (b * b), other.shape))

        return Tensor._from_op(a / b, (self, other), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor.lift(other) / self

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, exponent) -> "Tensor":
        if not np.isscalar(exponent):
            raise ShapeError("only scalar exponents are supported")
        a = self.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * a ** (exponent - 1))

        return Tensor._from_op(a**exponent, (self,), backward, "pow")

    def __matmul__(self, other) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must be at least 2-D")

        def backward(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(b, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(a, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._from_op(a @ b, (self, other), backward, "matmul")

    # -- elementwise functions ---------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * mask)

        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,), backward, "relu")

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * out_data)

        return Tensor._from_op(out_data, (self,), backward, "exp")

    def log(self) -> "Tensor":
        a = self.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / a)

        return Tensor._from_op(np.log(a), (self,), backward, "log")

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (self,), backward, "sqrt")

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        in_shape = self.shape

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, in_shape).copy())
                return
            gg = g if keepdims else np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, in_shape).copy())

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Maximum over one axis. Ties route gradient to the lowest index."""
        idx = np.argmax(self.data, axis=axis)
        out_data = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out_data = np.squeeze(out_data, axis=axis)

        def backward(g):
            if not self.requires_grad:
                return
            gg = g if keepdims else np.expand_dims(g, axis)
            grad = np.zeros_like(self.data)
            np.put_along_axis(grad, np.expand_dims(idx, axis), gg, axis=axis)
            self._accumulate(grad)

        return Tensor._from_op(out_data, (self,), backward, "max")

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.shape

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(in_shape))

        return Tensor._from_op(self.data.reshape(shape), (self,), backward, "reshape")

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inv))

        return Tensor._from_op(self.data.transpose(axes), (self,), backward, "transpose")

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(".T is defined for 2-D tensors")
        return self.transpose((1, 0))

    def __getitem__(self, key) -> "Tensor":
        in_shape = self.shape
        basic = isinstance(key, (int, slice)) or (
            isinstance(key, tuple) and all(isinstance(k, (int, slice)) for k in key)
        )

        def backward(g):
            if self.requires_grad:
                grad = np.zeros(in_shape)
                if basic:
                    grad[key] += g
                else:
                    np.add.at(grad, key, g)
                self._accumulate(grad)

        return Tensor._from_op(self.data[key], (self,), backward, "slice")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [Tensor.lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(data, tuple(tensors), backward, "concat")


def take(t: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array.

    The result replaces dimension ``axis`` with ``indices.shape``; duplicate
    indices accumulate gradient additively.
    """
    t = Tensor.lift(t)
    indices = np.asarray(indices, dtype=np.intp)
    key = (slice(None),) * axis + (indices,)

    # Scatter-add for [B, V, D] gathered along axis 1 runs as one batched
    # GEMM against a one-hot matrix; np.add.at is the general fallback.
    scatter = None
    if axis == 1 and t.ndim == 3:
        flat_idx = indices.reshape(-1)
        scatter = np.zeros((t.shape[1], flat_idx.size))
        scatter[flat_idx, np.arange(flat_idx.size)] = 1.0

    def backward(g):
        if not t.requires_grad:
            return
        if scatter is not None:
            grad = scatter @ g.reshape(g.shape[0], -1, g.shape[-1])
        else:
            grad = np.zeros(t.shape)
            np.add.at(grad, key, g)
        t._accumulate(grad)

    return Tensor._from_op(t.data[key], (t,), backward, "take")


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = [Tensor.lift(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g[i])

    data = np.stack([t.data for t in tensors], axis=0)
    return Tensor._from_op(data, tuple(tensors), backward, "stack")
