"""Central finite-difference oracle used across the gradient tests."""

import numpy as np


def finite_difference(fn, x0, step=1e-5):
    """Central-difference gradient of scalar fn at x0 (ndarray)."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    xflat = x0.reshape(-1)
    for i in range(xflat.size):
        orig = xflat[i]
        xflat[i] = orig + step
        fp = fn(x0)
        xflat[i] = orig - step
        fm = fn(x0)
        xflat[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
