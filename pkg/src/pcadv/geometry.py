"""Point-cloud container, neighbourhoods, normals and synthetic shapes."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel

DEFAULT_K = 16
SHAPES = ("sphere", "cube", "cylinder", "torus")

# cylinder: radius 1, height 2; torus: tube radius 0.35 around a ring of radius 1
_CYL_RADIUS, _CYL_HALF_HEIGHT = 1.0, 1.0
_TORUS_R, _TORUS_r = 1.0, 0.35


@dataclass(eq=False)
class PointCloud:
    """An ordered set of n 3D points with optional unit normals.

    ``degenerate`` is filled by :func:`estimate_normals` and marks points whose
    neighbourhood collapsed to a single location.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise ValueError(f"points must have shape (n, 3) with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise ValueError("normals must have unit length")
            self.normals = nrm

    def __len__(self):
        return len(self.points)

    @property
    def n(self):
        return len(self.points)

    def with_points(self, points):
        """Same cloud with new coordinates; normals are dropped since they no longer apply."""
        return PointCloud(points)

    def copy(self):
        return PointCloud(self.points.copy(),
                          None if self.normals is None else self.normals.copy(),
                          None if self.degenerate is None else self.degenerate.copy())


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Row i holds the indices of the k nearest neighbours of point i (self excluded)."""

    indices: np.ndarray
    k: int


def _coords(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def knn(cloud, k=DEFAULT_K):
    """k nearest neighbours of every point by exhaustive search.

    Ties go to the lower index.
    """
    pts = _coords(cloud)
    n = len(pts)
    k = int(k)
    if k < 1 or k >= n:
        raise ValueError(f"knn needs 1 <= k < n, got k={k}, n={n}")
    return NeighborTable(_accel.knn(pts, k), k)


def _smallest_eigvecs(cov):
    # eigh returns ascending eigenvalues; column 0 is the smallest
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def estimate_normals(cloud, k=DEFAULT_K, nbrs=None):
    """PCA normals over each point's k-neighbourhood plus the point itself.

    Normals point away from the cloud centroid. A neighbourhood whose points
    all coincide gets the normal (0, 0, 1) and is flagged in
    ``result.degenerate``.
    """
    pts = _coords(cloud)
    n = len(pts)
    if k < 3 or k >= n:
        raise ValueError(f"estimate_normals needs 3 <= k < n, got k={k}, n={n}")
    if nbrs is None:
        nbrs = knn(pts, k)
    idx = np.concatenate([np.arange(n)[:, None], nbrs.indices], axis=1)
    hood = pts[idx]
    centered = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / idx.shape[1]
    normals = _smallest_eigvecs(cov)

    scale = np.einsum("nii->n", cov)
    degenerate = scale <= 1e-24
    normals[degenerate] = (0.0, 0.0, 1.0)

    outward = np.einsum("ij,ij->i", normals, pts - pts.mean(axis=0))
    flip = (outward < 0) & ~degenerate
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts.copy(), normals, degenerate)


def normalize_unit_ball(cloud):
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = _coords(cloud)
    centered = pts - pts.mean(axis=0)
    radius = np.sqrt(np.max(np.sum(centered * centered, axis=1)))
    if radius == 0.0:
        return PointCloud(np.zeros_like(pts))
    return PointCloud(centered / radius)


def _sample_sphere(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(rng, n):
    # six faces have equal area, so the face is chosen uniformly
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _sample_cylinder(rng, n):
    # area-weighted choice between the side and the two caps
    side = 2 * np.pi * _CYL_RADIUS * 2 * _CYL_HALF_HEIGHT
    cap = np.pi * _CYL_RADIUS ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(-_CYL_HALF_HEIGHT, _CYL_HALF_HEIGHT, size=n)
    rad = _CYL_RADIUS * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    on_side = part == 0
    r = np.where(on_side, _CYL_RADIUS, rad)
    z = np.where(on_side, z, np.where(part == 1, -_CYL_HALF_HEIGHT, _CYL_HALF_HEIGHT))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _sample_torus(rng, n):
    # rejection on the tube angle: area element is proportional to R + r cos(phi)
    out = np.empty((0, 2))
    while len(out) < n:
        phi = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0.0, _TORUS_R + _TORUS_r, size=2 * n) < _TORUS_R + _TORUS_r * np.cos(phi)
        theta = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        out = np.concatenate([out, np.stack([theta[keep], phi[keep]], axis=1)])
    theta, phi = out[:n, 0], out[:n, 1]
    ring = _TORUS_R + _TORUS_r * np.cos(phi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), _TORUS_r * np.sin(phi)], axis=1)


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
}


def sample_surface(kind, n, seed):
    """Raw surface samples before normalisation (useful for face-membership checks)."""
    if kind not in _SAMPLERS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPES}")
    if n < 8:
        raise ValueError(f"sample_shape needs n >= 8, got {n}")
    rng = np.random.default_rng(seed)
    # every shape is symmetric about the origin; antithetic pairs (p, -p) keep
    # each point uniform while pinning the centroid to the shape centre, so
    # unit-ball normalisation does not skew the surface
    half = _SAMPLERS[kind](rng, (int(n) + 1) // 2)
    return np.concatenate([half, -half])[: int(n)]


def sample_shape(kind, n, seed):
    """n points uniform on the surface of ``kind``, normalised to the unit ball."""
    return normalize_unit_ball(sample_surface(kind, n, seed))
