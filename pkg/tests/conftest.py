import numpy as np
import pytest


def numerical_grad(f, arrays, eps=1e-3):
    """Central finite differences of the scalar-valued f() with respect to
    each array in `arrays` (mutated in place, float64)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gf = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
