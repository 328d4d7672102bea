import numpy as np
import pytest

from pcadv import classifier as clf
from pcadv import io


@pytest.fixture(scope="session")
def toy_model():
    """The 4-class toy classifier trained once per session (about 15 s)."""
    data = io.synthetic_dataset(per_class=100, points=256, seed=0)
    result = clf.train([(c, lab) for c, lab, _ in data], clf.TrainConfig(epochs=50, seed=0))
    return result


@pytest.fixture(scope="session")
def heldout():
    return io.synthetic_dataset(per_class=25, points=256, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradient(f, y, h=1e-5):
    """Central finite differences of a scalar function of an (n, 3) array."""
    g = np.zeros_like(y)
    for idx in np.ndindex(*y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        g[idx] = (f(yp) - f(ym)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-4, abs_tol=1e-8):
    # entrywise: either absolutely tiny or within the relative bound
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (err > abs_tol) & (err > rel * scale)
    assert not bad.any(), f"{bad.sum()} components off; worst err {err.max():.3e}"
