"""Parameter bookkeeping and the Adam update rule.

A :class:`ParamStore` keeps named trainable tensors and non-trainable
buffers (batch-norm running statistics and their batch counter) in
insertion order, which fixes the serialization order for checkpoints.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered registry of named parameters and buffers."""

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate store entry {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate store entry {name!r}")
        t = Tensor(data, requires_grad=False)
        self.buffers[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        """Collect gradients for parameters that received one."""
        return {k: t.grad for k, t in self.params.items() if t.grad is not None}

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def entries(self) -> list[tuple[str, str, Tensor]]:
        """All (name, kind, tensor) rows in serialization order."""
        rows = [(k, "param", t) for k, t in self.params.items()]
        rows += [(k, "buffer", t) for k, t in self.buffers.items()]
        return rows


def adam_init(params: dict[str, Tensor]) -> dict:
    """Fresh first/second moment estimates plus the shared step counter."""
    return {
        "step": 0,
        "m": {k: np.zeros_like(t.data) for k, t in params.items()},
        "v": {k: np.zeros_like(t.data) for k, t in params.items()},
    }


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: dict,
              lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without an entry in ``grads`` keep their value and their
    moment estimates; the step counter advances once per call.
    """
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for {name!r}")
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for a ParamStore."""

    def __init__(self, store: ParamStore, lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = adam_init(store.params)

    def step(self) -> None:
        adam_step(self.store.params, self.store.grads(), self.state,
                  lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self) -> None:
        self.store.zero_grad()
