import numpy as np
import pytest
from hypothesis import settings

from cfedic.shapes import clear_cache

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _fresh_shape_cache():
    yield
    clear_cache()


@pytest.fixture(scope="session")
def small_speckle():
    from cfedic.synth import generate_speckle

    pattern, img = generate_speckle((120, 120), radius_range=(2.0, 3.5), seed=7)
    return pattern, img


def fd_gradient(fn, pts, eps=1e-6):
    """Central differences of ``fn(pts) -> (n, k)`` along each coordinate, ``(n, k, d)``."""
    pts = np.asarray(pts, dtype=float)
    cols = []
    for d in range(pts.shape[1]):
        step = np.zeros(pts.shape[1])
        step[d] = eps
        cols.append((fn(pts + step) - fn(pts - step)) / (2 * eps))
    return np.stack(cols, axis=-1)
