"""Central finite differences, the independent oracle for ``backward``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError


def finite_diff_grad(f: Callable[[np.ndarray], float], point, h: float = 1e-3) -> np.ndarray:
    """Gradient of scalar ``f`` at ``point`` by ``(f(x+h) - f(x-h)) / 2h``, in float64."""
    if not h > 0:
        raise ConfigurationError("finite difference step must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
