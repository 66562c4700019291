from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, inputs, index: int, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``."""
    x = inputs[index]
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(*inputs).item()
        flat[i] = orig - eps
        fm = fn(*inputs).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def gradcheck(fn, inputs, eps: float = 1e-6, tol: float = 1e-4) -> float:
    """Largest |analytic - numeric| / max(1, |analytic|) over all float64 inputs.

    ``fn`` maps the input tensors to a scalar tensor.  Raises AssertionError
    when the error exceeds ``tol``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 tensors")
        t.grad = None
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(fn, inputs, i, eps)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(err.max()))
    if worst >= tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3g}")
    return worst


def randn(rng, *shape, requires_grad=True) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)
