"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, precision


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max over coordinates of |a-b| / max(|a|, |b|, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, eps: float) -> np.ndarray:
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return grad


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss, wrt=params)
    return [np.asarray(grads[p], dtype=np.float64) for p in params]


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    dtype=np.float64,
    analytic_scale: float = 1.0,
) -> float:
    """Largest relative error between backward() and central differences.

    ``f`` must rebuild the scalar loss from ``params`` on every call.
    Parameters are promoted to ``dtype`` for the duration of the check so the
    difference quotient is not dominated by rounding; they are restored after.
    ``analytic_scale`` exists only to validate the harness with a corrupted
    gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    saved = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(dtype)
        with precision(dtype):
            analytic = analytic_gradients(f, params)
            worst = 0.0
            for p, a in zip(params, analytic):
                n = numerical_gradient(f, p, eps)
                worst = max(worst, relative_error(a * analytic_scale, n))
    finally:
        for p, d in zip(params, saved):
            p.data = d
    return worst
