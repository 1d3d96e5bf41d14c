"""Parameter initializers.

Non-recurrent weights are drawn from N(0, 0.01^2); recurrent weight blocks are
orthogonal; initial recurrent states start at zero and are trained.
"""
from __future__ import annotations

import numpy as np


def init_gaussian(shape, rng: np.random.Generator, sigma: float = 0.01, dtype=np.float64) -> np.ndarray:
    return (rng.standard_normal(shape) * sigma).astype(dtype)


def init_orthogonal(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Orthogonal (or semi-orthogonal for non-square) 2-D matrix."""
    shape = tuple(shape)
    if len(shape) != 2:
        raise ValueError(f"orthogonal init needs a 2-D shape, got {shape}")
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # sign fix makes the distribution uniform over orthogonal matrices
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q.astype(dtype)


def init_learned_state(size: int, dtype=np.float64) -> np.ndarray:
    return np.zeros(size, dtype=dtype)


def init_zeros(shape, dtype=np.float64) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)
