"""Minimal reverse-mode autodiff over float32 numpy arrays.

The engine tracks a closed set of operations: elementwise arithmetic,
matmul, a few activations, reductions, reshapes and (fancy) indexing.
Model math is float32 throughout; test oracles recompute in float64.
Graph recording is disabled inside a ``no_grad()`` block.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(ValueError):
    """Raised when an operation receives or produces NaN/Inf values."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def require_finite(name: str, arr: np.ndarray) -> None:
    """Reject NaN/Inf values; NaN/Inf is an error condition, never silent."""
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, (g, s) in enumerate(zip(grad.shape, shape)):
        if s != g:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float32 ndarray plus an optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    @staticmethod
    def astensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.requires_grad:
            if self.grad is None:
                self.grad = grad.astype(np.float32, copy=True)
            else:
                self.grad += grad

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor.astensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = Tensor.astensor(other)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * np.float32(-1.0)

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor.astensor(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor.astensor(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = Tensor.astensor(other)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
            )

        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor.astensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        p = float(exponent)
        out_data = self.data**np.float32(p)

        def backward(g):
            self._accumulate(g * np.float32(p) * self.data ** np.float32(p - 1.0))

        return Tensor._from_op(out_data, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = Tensor.astensor(other)
        out_data = np.matmul(self.data, other.data)

        def backward(g):
            self._accumulate(
                _unbroadcast(np.matmul(g, np.swapaxes(other.data, -1, -2)), self.data.shape)
            )
            other._accumulate(
                _unbroadcast(np.matmul(np.swapaxes(self.data, -1, -2), g), other.data.shape)
            )

        return Tensor._from_op(out_data, (self, other), backward)

    # -- pointwise functions ---------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._from_op(out_data, (self,), backward)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g / (np.float32(2.0) * out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (np.float32(1.0) - out_data * out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        out_data = np.float32(1.0) / (np.float32(1.0) + np.exp(-self.data))

        def backward(g):
            self._accumulate(g * out_data * (np.float32(1.0) - out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, np.float32(0.0))

        def backward(g):
            self._accumulate(g * (self.data > 0.0).astype(np.float32))

        return Tensor._from_op(out_data, (self,), backward)

    def gelu(self) -> "Tensor":
        # tanh approximation; differentiable composition of tracked ops
        c = np.float32(np.sqrt(2.0 / np.pi))
        inner = (self + self * self * self * np.float32(0.044715)) * c
        return self * np.float32(0.5) * (inner.tanh() + np.float32(1.0))

    def silu(self) -> "Tensor":
        return self * self.sigmoid()

    def softplus(self) -> "Tensor":
        # log(1 + exp(x)), overflow-safe; d/dx = sigmoid(x)
        out_data = np.logaddexp(np.float32(0.0), self.data).astype(np.float32)

        def backward(g):
            sig = np.float32(1.0) / (np.float32(1.0) + np.exp(-self.data))
            self._accumulate(g * sig)

        return Tensor._from_op(out_data, (self,), backward)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % self.data.ndim for a in axes):
                    g = np.expand_dims(g, ax)
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor._from_op(np.asarray(out_data, dtype=np.float32), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * np.float32(1.0 / n)

    # -- structure -------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(self.data.shape))

        return Tensor._from_op(out_data, (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out_data = self.data.transpose(axes)
        inverse = tuple(np.argsort(axes))

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._from_op(out_data, (self,), backward)

    def __getitem__(self, idx) -> "Tensor":
        out_data = self.data[idx]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)  # handles repeated fancy indices
            self._accumulate(full)

        return Tensor._from_op(np.ascontiguousarray(out_data), (self,), backward)

    # -- backward pass -----------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; accumulates into ``.grad``.

        Interior nodes hold their gradient only for the duration of the
        sweep; leaves keep whatever was accumulated.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)

        # iterative topological order (graphs can be deep)
        topo: list[Tensor] = []
        visited: set[int] = set()
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
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.asarray(seed, dtype=np.float32).reshape(self.data.shape)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # interior gradients are transient

    def zero_grad(self) -> None:
        self.grad = None


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.astensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            t._accumulate(g[tuple(sl)])
            start += s

    return Tensor._from_op(out_data, tuple(tensors), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.astensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = i
            t._accumulate(g[tuple(sl)])

    return Tensor._from_op(out_data, tuple(tensors), backward)
