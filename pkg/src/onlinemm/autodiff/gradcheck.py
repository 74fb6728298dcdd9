"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(f, x: Tensor, step=1e-4):
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            up, down = orig + step, orig - step
            flat[i] = up
            hi = float(f(x).data)
            flat[i] = down
            lo = float(f(x).data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (up - down)  # the step actually realized in floating point
    return g


def finite_diff_check(f, x: Tensor, step=1e-4, floor=1e-6) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps ``x`` to a scalar tensor and must be pure. The relative
    error of each entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = x.grad.copy()
    numeric = numeric_grad(f, x, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
