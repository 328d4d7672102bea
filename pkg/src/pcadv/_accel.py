"""Hot point-pair kernels.

Every kernel has a pure-numpy implementation (``*_np``) and, when numba is
importable, an ``@njit`` twin (``*_nb``). The public names bound at the bottom
of the module pick one of the two at import time. Set ``PCADV_DISABLE_NUMBA=1``
to force the numpy path.
"""
import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is optional
    nb = None

COINCIDENT_EPS = 1e-12


def _env_disabled():
    return os.environ.get("PCADV_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


HAVE_NUMBA = nb is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def sqdist_np(a, b):
    """All-pairs squared distances, shape (len(a), len(b)).

    Summation order is dx*dx + dy*dy + dz*dz so that both backends round the
    same way (ties in kNN must resolve identically).
    """
    diff = a[:, None, :] - b[None, :, :]
    sq = diff * diff
    return (sq[..., 0] + sq[..., 1]) + sq[..., 2]


def knn_np(points, k):
    d = sqdist_np(points, points)
    np.fill_diagonal(d, np.inf)
    # stable sort => equal distances keep ascending index order
    return np.argsort(d, axis=1, kind="stable")[:, :k].astype(np.int64)


def nearest_np(queries, refs):
    d = sqdist_np(queries, refs)
    # argmin returns the first occurrence, i.e. the lowest index on ties
    idx = np.argmin(d, axis=1)
    return idx.astype(np.int64), d[np.arange(len(queries)), idx]


def kappa_np(points, normals, nbrs):
    diff = points[nbrs] - points[:, None, :]
    r = np.sqrt(np.sum(diff * diff, axis=2))
    dots = np.einsum("ikc,ic->ik", diff, normals)
    safe = np.where(r < COINCIDENT_EPS, 1.0, r)
    terms = np.where(r < COINCIDENT_EPS, 0.0, np.abs(dots) / safe)
    return terms.sum(axis=1) / nbrs.shape[1]


def kappa_grad_np(points, normals, nbrs, coef):
    """Gradient of sum_i coef[i] * kappa_i w.r.t. the points.

    Normals and neighbour sets are treated as constants.
    """
    n, k = nbrs.shape
    diff = points[nbrs] - points[:, None, :]
    r = np.sqrt(np.sum(diff * diff, axis=2))
    live = r >= COINCIDENT_EPS
    safe = np.where(live, r, 1.0)
    unit = diff / safe[..., None]
    s = np.einsum("ikc,ic->ik", unit, normals)
    # d|s|/d(diff) = sign(s) * (normal - s * unit) / r
    w = np.where(live, np.sign(s) / safe, 0.0) * (coef[:, None] / k)
    contrib = w[..., None] * (normals[:, None, :] - s[..., None] * unit)
    grad = np.zeros_like(points)
    np.add.at(grad, nbrs.ravel(), contrib.reshape(-1, 3))
    grad -= contrib.sum(axis=1)
    return grad


def knn_mean_dist_np(points, nbrs, squared):
    diff = points[nbrs] - points[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    vals = d2 if squared else np.sqrt(d2)
    return vals.sum(axis=1) / nbrs.shape[1]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @nb.njit(cache=True, nogil=True)
    def _pair_sq(a, i, b, j):
        dx = a[i, 0] - b[j, 0]
        dy = a[i, 1] - b[j, 1]
        dz = a[i, 2] - b[j, 2]
        return (dx * dx + dy * dy) + dz * dz

    @nb.njit(cache=True, nogil=True)
    def knn_nb(points, k):
        n = points.shape[0]
        out = np.empty((n, k), dtype=np.int64)
        best_d = np.empty(k)
        best_i = np.empty(k, dtype=np.int64)
        for i in range(n):
            filled = 0
            for j in range(n):
                if j == i:
                    continue
                d = _pair_sq(points, i, points, j)
                if filled == k and d >= best_d[k - 1]:
                    continue
                # j increases monotonically, so strict '<' keeps the lower
                # index ahead on ties
                pos = filled if filled < k else k - 1
                while pos > 0 and best_d[pos - 1] > d:
                    if pos < k:
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best_d[pos] = d
                best_i[pos] = j
                if filled < k:
                    filled += 1
            for m in range(k):
                out[i, m] = best_i[m]
        return out

    @nb.njit(cache=True, nogil=True)
    def nearest_nb(queries, refs):
        m = queries.shape[0]
        idx = np.empty(m, dtype=np.int64)
        dist = np.empty(m)
        for j in range(m):
            bi = 0
            bd = _pair_sq(queries, j, refs, 0)
            for i in range(1, refs.shape[0]):
                d = _pair_sq(queries, j, refs, i)
                if d < bd:
                    bd = d
                    bi = i
            idx[j] = bi
            dist[j] = bd
        return idx, dist

    @nb.njit(cache=True, nogil=True)
    def kappa_nb(points, normals, nbrs):
        n, k = nbrs.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for m in range(k):
                j = nbrs[i, m]
                dx = points[j, 0] - points[i, 0]
                dy = points[j, 1] - points[i, 1]
                dz = points[j, 2] - points[i, 2]
                r = np.sqrt((dx * dx + dy * dy) + dz * dz)
                if r < COINCIDENT_EPS:
                    continue
                acc += abs(dx * normals[i, 0] + dy * normals[i, 1] + dz * normals[i, 2]) / r
            out[i] = acc / k
        return out

    @nb.njit(cache=True, nogil=True)
    def kappa_grad_nb(points, normals, nbrs, coef):
        n, k = nbrs.shape
        grad = np.zeros_like(points)
        for i in range(n):
            for m in range(k):
                j = nbrs[i, m]
                dx = points[j, 0] - points[i, 0]
                dy = points[j, 1] - points[i, 1]
                dz = points[j, 2] - points[i, 2]
                r = np.sqrt((dx * dx + dy * dy) + dz * dz)
                if r < COINCIDENT_EPS:
                    continue
                ux, uy, uz = dx / r, dy / r, dz / r
                s = ux * normals[i, 0] + uy * normals[i, 1] + uz * normals[i, 2]
                if s == 0.0:
                    continue
                w = (1.0 if s > 0 else -1.0) / r * coef[i] / k
                cx = w * (normals[i, 0] - s * ux)
                cy = w * (normals[i, 1] - s * uy)
                cz = w * (normals[i, 2] - s * uz)
                grad[j, 0] += cx
                grad[j, 1] += cy
                grad[j, 2] += cz
                grad[i, 0] -= cx
                grad[i, 1] -= cy
                grad[i, 2] -= cz
        return grad

    @nb.njit(cache=True, nogil=True)
    def knn_mean_dist_nb(points, nbrs, squared):
        n, k = nbrs.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for m in range(k):
                d = _pair_sq(points, i, points, nbrs[i, m])
                acc += d if squared else np.sqrt(d)
            out[i] = acc / k
        return out

else:  # pragma: no cover
    knn_nb = nearest_nb = kappa_nb = kappa_grad_nb = knn_mean_dist_nb = None


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_NUMBA:
    def knn(points, k):
        return knn_nb(_as_f64(points), int(k))

    def nearest(queries, refs):
        return nearest_nb(_as_f64(queries), _as_f64(refs))

    def kappa(points, normals, nbrs):
        return kappa_nb(_as_f64(points), _as_f64(normals), np.ascontiguousarray(nbrs, dtype=np.int64))

    def kappa_grad(points, normals, nbrs, coef):
        return kappa_grad_nb(_as_f64(points), _as_f64(normals),
                             np.ascontiguousarray(nbrs, dtype=np.int64), _as_f64(coef))

    def knn_mean_dist(points, nbrs, squared):
        return knn_mean_dist_nb(_as_f64(points), np.ascontiguousarray(nbrs, dtype=np.int64), bool(squared))
else:
    knn = knn_np
    nearest = nearest_np
    kappa = kappa_np
    kappa_grad = kappa_grad_np
    knn_mean_dist = knn_mean_dist_np
