"""Central finite differences for the gradient checks."""

import numpy as np


def numeric_grad(f, x, eps=1e-6, coords=None):
    """d f / d x[i] for i in ``coords`` (all coordinates by default)."""
    x = np.array(x, dtype=np.float64)
    coords = range(x.size) if coords is None else coords
    out = []
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        out.append((f(xp) - f(xm)) / (2 * eps))
    return np.array(out)


def directional(f, x, d, eps=1e-6):
    return (f(x + eps * d) - f(x - eps * d)) / (2 * eps)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)
