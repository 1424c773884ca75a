"""Shared numeric test utilities (finite differences, error measures)."""

import numpy as np


def numeric_grad(f, arr, h=1e-5):
    """Central finite differences of scalar f() w.r.t. entries of arr.

    f must recompute from the current contents of arr; arr is perturbed
    in place and restored.
    """
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    """Worst-case relative disagreement, floored to avoid 0/0 blowup."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
