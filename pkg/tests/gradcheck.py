"""Finite-difference gradient verification harness (64-bit mode)."""

from __future__ import annotations

import numpy as np

from defog.kernel import Tensor

from oracles import central_difference, rel_error


def check_gradients(build, arrays, tol: float = 1e-5, eps: float = 1e-5) -> None:
    """Compare backward() grads of ``build(*tensors) -> scalar`` with
    central differences with respect to every input array.

    ``build`` must be a pure function of its tensor arguments (re-seed any
    randomness internally), evaluated here in float64.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    assert out.size == 1, "gradient check target must be scalar"
    out.backward()

    for i, t in enumerate(tensors):
        def scalar_fn(x: np.ndarray, i: int = i) -> float:
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x)
            return float(build(*args).data)

        numeric = central_difference(scalar_fn, arrays[i], eps=eps)
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        err = rel_error(analytic, numeric)
        assert err <= tol, f"gradient mismatch on input {i}: rel err {err:.3g} > {tol}"
