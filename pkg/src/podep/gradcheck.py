"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import Tape, Tensor, backward


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(fn: Callable[..., Tensor], point: Sequence[Tensor], step: float = 1e-5) -> list[np.ndarray]:
    grads = []
    for t in point:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn(*point).data)
            flat[i] = orig - step
            down = float(fn(*point).data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def analytic_gradient(fn: Callable[..., Tensor], point: Sequence[Tensor]) -> list[np.ndarray]:
    saved = [t.requires_grad for t in point]
    for t in point:
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = fn(*point)
        return backward(tape, loss, wrt=point)
    finally:
        for t, flag in zip(point, saved):
            t.requires_grad = flag


def finite_diff_check(fn: Callable[..., Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``fn`` is called as ``fn(*point)`` and must return a scalar tensor.  The
    point tensors should hold 64-bit data; they are perturbed in place and
    restored.  ``fn`` must be deterministic (reseed any dropout rng inside).
    """
    if isinstance(point, Tensor):
        point = [point]
    point = list(point)
    for t in point:
        if t.dtype != np.float64:
            raise TypeError(f"finite_diff_check needs float64 inputs, got {t.dtype}")
    analytic = analytic_gradient(fn, point)
    numeric = numeric_gradient(fn, point, step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            worst = max(worst, float(relative_error(a, n).max()))
    return worst
