"""Input-purification defenses and gradient averaging through randomized ones.

SOR drops points whose mean distance to their k nearest neighbours is
unusually large. SRS keeps a uniformly random subset. Both preserve the
input order of the surviving points.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from . import classifier as clf
from .geometry import PointCloud, knn
from .metrics import SPREAD_RTOL, GradientField

SOR_K = 2
SOR_ALPHA = 1.1
SRS_DROP = 500
EOT_SAMPLES = 100


def _pts(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


@dataclass
class Purified:
    cloud: PointCloud
    kept: np.ndarray        # indices into the input, ascending
    emptied: bool = False   # SOR would have removed everything


def sor_indices(points, k=SOR_K, alpha=SOR_ALPHA):
    """Kept indices for SOR plus a flag set when the guard had to step in."""
    pts = _pts(points)
    if alpha <= 0:
        raise ValueError("SOR alpha must be positive")
    nbrs = knn(pts, k)   # raises unless 1 <= k < n
    stat = _accel.knn_mean_dist(pts, nbrs.indices, False)
    mu = stat.mean()
    thresh = mu + alpha * stat.std() + SPREAD_RTOL * mu
    kept = np.flatnonzero(stat <= thresh)
    if kept.size == 0:
        return np.array([int(np.argmin(stat))]), True
    return kept, False


def sor(cloud, k=SOR_K, alpha=SOR_ALPHA):
    kept, emptied = sor_indices(cloud, k, alpha)
    return Purified(PointCloud(_pts(cloud)[kept]), kept, emptied)


def srs_indices(n, drop, rng):
    if drop < 0:
        raise ValueError("SRS drop must be >= 0")
    if drop >= n:
        raise ValueError(f"SRS drop {drop} must be smaller than the cloud size {n}")
    return np.sort(rng.choice(n, size=n - drop, replace=False))


def srs(cloud, drop=SRS_DROP, seed=0):
    pts = _pts(cloud)
    kept = srs_indices(len(pts), drop, np.random.default_rng(seed))
    return Purified(PointCloud(pts[kept]), kept)


class SOR:
    randomized = False

    def __init__(self, k=SOR_K, alpha=SOR_ALPHA):
        if alpha <= 0:
            raise ValueError("SOR alpha must be positive")
        if k < 1:
            raise ValueError("SOR k must be >= 1")
        self.k, self.alpha = k, alpha

    def indices(self, points, rng=None):
        return sor_indices(points, self.k, self.alpha)[0]


class SRS:
    randomized = True

    def __init__(self, drop=SRS_DROP):
        if drop < 0:
            raise ValueError("SRS drop must be >= 0")
        self.drop = drop

    def indices(self, points, rng):
        return srs_indices(len(points), self.drop, rng)


def eot_gradient(params, defense, cloud, t, n_samples=EOT_SAMPLES, seed=0, rng=None):
    """Margin-loss input gradient averaged over ``n_samples`` defense draws.

    Rows of points removed by a draw get zero from that draw. A deterministic
    defense is evaluated once since every draw is the same.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = _pts(cloud)
    rng = np.random.default_rng(seed) if rng is None else rng
    if not defense.randomized:
        kept = defense.indices(pts)
        g = np.zeros_like(pts)
        _, gk, _ = clf.margin_and_gradient(params, pts[kept], t)
        g[kept] = gk
        return GradientField(g, f"{type(defense).__name__}: deterministic, single draw")
    draws = [defense.indices(pts, rng) for _ in range(n_samples)]
    sizes = {len(d) for d in draws}
    g = np.zeros_like(pts)
    if len(sizes) == 1:
        stack = np.stack([pts[d] for d in draws])
        dX, _ = clf.margin_gradient_batch(params, stack, t)
        for d, gd in zip(draws, dX):
            g[d] += gd
    else:
        for d in draws:
            g[d] += clf.margin_and_gradient(params, pts[d], t)[1]
    return GradientField(g / n_samples, f"{type(defense).__name__}: mean over {n_samples} draws")


class DefendedModel:
    """A classifier behind a purifier, usable as an attack model or oracle.

    All randomness comes from one generator seeded at construction, so a
    run is reproducible given the seed and the call sequence.
    """

    def __init__(self, params, defense, n_eot=EOT_SAMPLES, seed=0):
        if n_eot < 1:
            raise ValueError("EOT sample count must be >= 1")
        self.params = params
        self.defense = defense
        self.n_eot = n_eot
        self.rng = np.random.default_rng(seed)

    def purify(self, points):
        pts = _pts(points)
        return pts[self.defense.indices(pts, self.rng)]

    def predict(self, points):
        return clf.predict(self.params, self.purify(points))

    def __call__(self, points):
        return self.predict(points)

    def margin_and_gradient(self, points, t):
        pts = _pts(points)
        kept = self.purify(pts)
        logits = clf.forward(self.params, kept)
        loss = clf.margin_loss(logits, t)
        g = eot_gradient(self.params, self.defense, pts, t, self.n_eot, rng=self.rng).values
        return loss, g, clf.argmax_label(logits)
