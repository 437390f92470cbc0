import numpy as np
import pytest

from casvsr.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def fd_gradient(fn, params: dict[str, Tensor], h_rel: float = 1e-3) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar-valued computation.

    Independent of the reverse-mode engine: only re-evaluates fn() with
    perturbed parameter entries. h is relative to each entry's magnitude.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = h_rel * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            hi = float(fn().data)
            flat[i] = orig - h
            lo = float(fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads[name] = g
    return grads


def relative_gradient_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    """Norm-wise relative error over the concatenated parameter vector."""
    a = np.concatenate([analytic[k].reshape(-1) for k in sorted(analytic)])
    n = np.concatenate([numeric[k].reshape(-1) for k in sorted(numeric)])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
