"""Central finite differences used as the independent gradient oracle."""
import numpy as np


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b)))
