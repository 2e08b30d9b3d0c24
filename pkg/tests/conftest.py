import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(fn, x0, eps=1e-5):
    """Central finite-difference gradient of a scalar function of a flat array."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x0)
        flat[i] = orig - eps
        lo = fn(x0)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad
