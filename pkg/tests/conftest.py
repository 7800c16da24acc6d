"""Shared numeric test helpers."""

from __future__ import annotations

import numpy as np


def central_difference(fn, arrays: list[np.ndarray], step: float = 1e-6) -> list[np.ndarray]:
    """Central finite-difference gradient of scalar fn() wrt each array, element-wise.

    fn takes no arguments and reads the arrays in place; entries are
    perturbed one at a time and restored afterwards.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            high = fn()
            flat[i] = keep - step
            low = fn()
            flat[i] = keep
            gf[i] = (high - low) / (2.0 * step)
        grads.append(g)
    return grads


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray,
                            floor: float = 1e-3) -> float:
    """Max |ga - gn| / max(|ga|, |gn|, floor); the floor keeps near-zero
    gradients from amplifying finite-difference roundoff."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())
