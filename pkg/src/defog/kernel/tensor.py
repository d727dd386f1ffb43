"""Reverse-mode autodiff tensor.

A Tensor wraps a numpy array together with the bookkeeping needed to run
backpropagation: the parent nodes it was computed from and a closure that
routes the output gradient to those parents.  Calling ``backward()`` on a
scalar result walks the recorded graph once, in reverse topological order,
and accumulates ``.grad`` on every reachable node.

Training runs in float32; float64 is selectable per tensor and is what the
finite-difference gradient checks use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (cheap eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array node in the autodiff graph.

    ``data`` is a contiguous numpy array (float32 by default, float64 for
    verification).  Leaf tensors (parameters, inputs) have no parents;
    results of kernel ops carry an op tag, their parent references and a
    backward closure over whatever activations the gradient needs.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op: str = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        """Wrap an op result.  Degrades to a constant when grad is disabled
        or no parent participates in the graph."""
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track, dtype=data.dtype)
        if track:
            out.op = op
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A leaf sharing this tensor's data, cut out of the graph."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward --------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Each node is visited exactly once, in reverse topological order;
        gradients from multiple consumers accumulate by addition.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() expects a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic (same-shape tensors or python scalars) ----------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        if other.shape not in ((), self.shape):
            raise ValueError(f"add: shape mismatch {self.shape} vs {other.shape}")

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(g)
            if other.requires_grad:
                other.accumulate_grad(g if other.shape == self.shape else g.sum())

        return Tensor.from_op(self.data + other.data, (self, other), "add", backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(-g)

        return Tensor.from_op(-self.data, (self,), "neg", backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return (-self) + self._coerce(other)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        if other.shape not in ((), self.shape):
            raise ValueError(f"mul: shape mismatch {self.shape} vs {other.shape}")

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(g * other.data)
            if other.requires_grad:
                go = g * self.data
                other.accumulate_grad(go if other.shape == self.shape else go.sum())

        return Tensor.from_op(self.data * other.data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def mean(self) -> "Tensor":
        n = self.data.size

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(np.full_like(self.data, g.reshape(()) / n))

        return Tensor.from_op(np.asarray(self.data.mean(), dtype=self.data.dtype), (self,), "mean", backward)

    def sum(self) -> "Tensor":
        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(np.full_like(self.data, g.reshape(())))

        return Tensor.from_op(np.asarray(self.data.sum(), dtype=self.data.dtype), (self,), "sum", backward)

    def log(self) -> "Tensor":
        saved = self.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(g / saved)

        return Tensor.from_op(np.log(self.data), (self,), "log", backward)

    def clamp(self, lo: float, hi: float) -> "Tensor":
        """Clip to [lo, hi]; gradient passes only through the interior."""
        mask = (self.data >= lo) & (self.data <= hi)

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(g * mask)

        return Tensor.from_op(np.clip(self.data, lo, hi), (self,), "clamp", backward)

    def reshape(self, shape) -> "Tensor":
        old = self.data.shape

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self.accumulate_grad(g.reshape(old))

        return Tensor.from_op(self.data.reshape(shape), (self,), "reshape", backward)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def all_finite(*tensors: Tensor | np.ndarray) -> bool:
    for t in tensors:
        arr = t.data if isinstance(t, Tensor) else t
        if not np.isfinite(arr).all():
            return False
    return True
