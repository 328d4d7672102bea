"""Imperceptibility metrics between a clean cloud X and an adversarial cloud Y.

All distances take raw ``(n, 3)`` arrays or :class:`PointCloud` objects. The
gradients are taken with respect to Y with every discrete choice (nearest
neighbours, argmax point, neighbour sets, normals) frozen at the current Y.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from .geometry import DEFAULT_K, PointCloud, estimate_normals, knn

L2, CD, HD, CURV, SMOOTH = "L2", "CD", "HD", "Curv", "Smooth"
METRICS = (L2, CD, HD, CURV, SMOOTH)
REGULARIZERS = (L2, CD, HD, CURV)
SMOOTH_GAMMA = 1.05
# spreads this small relative to the mean are rounding noise, not outliers
SPREAD_RTOL = 1e-12

_ALIASES = {m.lower(): m for m in METRICS}


class UnsupportedMetricError(ValueError):
    pass


def metric_id(name):
    """Canonical metric id from a case-insensitive name."""
    try:
        return _ALIASES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; expected one of {', '.join(METRICS)}") from None


def regularizer_id(name):
    mid = metric_id(name)
    if mid == SMOOTH:
        raise UnsupportedMetricError(
            "Smooth is an evaluation-only metric and cannot be used as an attack regularizer")
    return mid


@dataclass(eq=False)
class GradientField:
    """d(metric)/dY, one row per adversarial point."""

    values: np.ndarray
    note: str = ""

    def flat(self):
        return self.values.ravel()


def _pts(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


def _nonempty(*clouds):
    for c in clouds:
        if len(c) == 0:
            raise ValueError("metric needs nonempty clouds")


def l2_distance(X, Y):
    x, y = _pts(X), _pts(Y)
    if x.shape != y.shape:
        raise ValueError(f"L2 needs equal-size clouds, got {x.shape} and {y.shape}")
    return float(np.sqrt(np.sum((y - x) ** 2)))


def chamfer(X, Y):
    x, y = _pts(X), _pts(Y)
    _nonempty(x, y)
    _, d = _accel.nearest(y, x)
    return float(np.sum(d) / len(y))


def hausdorff(X, Y):
    x, y = _pts(X), _pts(Y)
    _nonempty(x, y)
    _, d = _accel.nearest(y, x)
    return float(np.max(d))


def curvature_kappa(i, cloud, nbrs):
    """Local curvature statistic of point ``i`` given normals and neighbours."""
    if cloud.normals is None:
        raise ValueError("curvature_kappa needs a cloud with normals")
    row = nbrs.indices[i]
    diff = cloud.points[row] - cloud.points[i]
    r = np.linalg.norm(diff, axis=1)
    live = r >= _accel.COINCIDENT_EPS
    return float(np.sum(np.abs(diff[live] @ cloud.normals[i]) / r[live]) / nbrs.k)


def kappa_all(cloud, nbrs):
    """Curvature statistic for every point of ``cloud``."""
    return _accel.kappa(cloud.points, cloud.normals, nbrs.indices)


@dataclass(eq=False)
class CurvatureState:
    """Everything the frozen curvature surrogate holds fixed at one Y."""

    match: np.ndarray          # nearest clean index for each adversarial point
    nbrs: np.ndarray           # neighbour table of Y
    normals: np.ndarray        # sign-aligned normals of Y
    kappa_clean: np.ndarray    # kappa of the matched clean points
    kappa_adv: np.ndarray      # kappa of Y

    @property
    def value(self):
        return float(np.sum((self.kappa_adv - self.kappa_clean) ** 2) / len(self.kappa_adv))


def clean_curvature(X, k=DEFAULT_K):
    """Normals, neighbours and kappa of the clean cloud; reusable across iterations."""
    if isinstance(X, PointCloud) and X.normals is not None:
        cloud = X
    else:
        cloud = estimate_normals(_pts(X), k)
    nbrs = knn(cloud, k)
    return cloud, kappa_all(cloud, nbrs)


def curvature_state(X, Y, k=DEFAULT_K, clean=None):
    x, y = _pts(X), _pts(Y)
    if len(x) < k + 1 or len(y) < k + 1:
        raise ValueError(f"curvature consistency needs at least k+1={k + 1} points per cloud")
    if clean is None:
        clean = clean_curvature(X, k)
    x_cloud, kappa_x = clean
    match, _ = _accel.nearest(y, x)
    nbrs = knn(y, k)
    normals = estimate_normals(y, k, nbrs=nbrs).normals
    # align with the matched clean normal; kappa itself is sign-blind
    flip = np.einsum("ij,ij->i", normals, x_cloud.normals[match]) < 0
    normals[flip] *= -1.0
    kappa_y = _accel.kappa(y, normals, nbrs.indices)
    return CurvatureState(match, nbrs.indices, normals, kappa_x[match], kappa_y)


def curvature_consistency(X, Y, k=DEFAULT_K, clean=None):
    """Mean squared gap between adversarial and matched clean curvature.

    ``X`` should carry normals; they are estimated when missing. Normals of Y
    are always re-estimated.
    """
    return curvature_state(X, Y, k, clean).value


def knn_smoothness(Y, k=DEFAULT_K, gamma=SMOOTH_GAMMA):
    y = _pts(Y)
    nbrs = knn(y, k)
    d = _accel.knn_mean_dist(y, nbrs.indices, True)
    mu, sigma = d.mean(), d.std()
    return float(np.sum(d[d > mu + gamma * sigma + SPREAD_RTOL * mu]) / len(y))


def distance(mid, X, Y, k=DEFAULT_K, clean=None):
    mid = metric_id(mid)
    if mid == L2:
        return l2_distance(X, Y)
    if mid == CD:
        return chamfer(X, Y)
    if mid == HD:
        return hausdorff(X, Y)
    if mid == CURV:
        return curvature_consistency(X, Y, k, clean)
    return knn_smoothness(Y, k)


def all_distances(X, Y, k=DEFAULT_K, clean=None):
    """The five metrics of Y against X, keyed by metric id."""
    return {m: distance(m, X, Y, k, clean) for m in METRICS}


def metric_gradient(mid, X, Y, k=DEFAULT_K, clean=None, state=None):
    """Gradient of the frozen surrogate of metric ``mid`` with respect to Y."""
    mid = regularizer_id(mid)
    x, y = _pts(X), _pts(Y)
    n = len(y)
    if mid == L2:
        if x.shape != y.shape:
            raise ValueError(f"L2 needs equal-size clouds, got {x.shape} and {y.shape}")
        diff = y - x
        d = np.sqrt(np.sum(diff ** 2))
        if d == 0.0:
            return GradientField(np.zeros_like(y), "L2: zero at Y == X")
        return GradientField(diff / d, "L2")
    if mid in (CD, HD):
        _nonempty(x, y)
        match, dist = _accel.nearest(y, x)
        diff = y - x[match]
        if mid == CD:
            return GradientField(2.0 * diff / n, "CD: nearest clean point frozen")
        j = int(np.argmax(dist))
        g = np.zeros_like(y)
        g[j] = 2.0 * diff[j]
        return GradientField(g, f"HD: argmax row {j} and its match frozen")
    if state is None:
        state = curvature_state(X, Y, k, clean)
    coef = 2.0 * (state.kappa_adv - state.kappa_clean) / n
    g = _accel.kappa_grad(y, state.normals, state.nbrs, coef)
    return GradientField(g, "Curv: matches, neighbour sets and normals of Y frozen")
