"""Query-based black-box attack guided by a surrogate model's gradient.

Points are ranked by the tangent-plane magnitude of the surrogate gradient
and probed one at a time inside their tangent planes. The target model is
only ever asked for labels. After the first hit, a single Gram-Schmidt
refinement pass reduces the regularizers, still using surrogate gradients.
"""
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import classifier as clf
from . import metrics as M
from .attack import AttackPreconditionError, AttackResult, _Regularizers, gram_schmidt, normalize
from .geometry import DEFAULT_K, PointCloud, estimate_normals

PARALLEL_TOL = 1e-6


@dataclass
class BlackboxConfig:
    eps1: float = 0.32
    eps2: float = 0.16
    regularizers: Sequence[str] = (M.L2, M.CD, M.HD, M.CURV)
    budget: int = 0          # 0 means no limit beyond the point list
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("black-box step sizes must be positive")
        if self.budget < 0:
            raise ValueError("query budget must be >= 0")
        self.regularizers = tuple(M.regularizer_id(r) for r in self.regularizers)
        if not self.regularizers:
            raise ValueError("at least one regularizer is required")


class SensitivityEntry(NamedTuple):
    index: int
    score: float


def frames(normals):
    """Per-point rotation whose rows are (tangent1, tangent2, normal)."""
    n = np.asarray(normals, dtype=np.float64)
    ref = np.zeros_like(n)
    ref[:, 0] = 1.0
    t1 = ref - np.sum(ref * n, axis=1, keepdims=True) * n
    weak = np.linalg.norm(t1, axis=1) < PARALLEL_TOL
    if np.any(weak):
        alt = np.zeros((int(weak.sum()), 3))
        alt[:, 1] = 1.0
        t1[weak] = alt - np.sum(alt * n[weak], axis=1, keepdims=True) * n[weak]
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=1)


def rsi_transform(cloud):
    """Express each point in its own normal-aligned frame.

    Returns the transformed coordinates and the per-point rotations.
    """
    if not isinstance(cloud, PointCloud) or cloud.normals is None:
        raise ValueError("rsi_transform needs a cloud with normals")
    R = frames(cloud.normals)
    return np.einsum("nij,nj->ni", R, cloud.points), R


def rsi_inverse(transformed, R):
    return np.einsum("nji,nj->ni", R, transformed)


def to_frame(field, R):
    """Rotate per-point vectors (e.g. gradients) into the local frames."""
    return np.einsum("nij,nj->ni", R, field)


def sensitivity_map(g):
    """Points sorted by tangent-plane gradient magnitude, largest first."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("sensitivity map needs a finite gradient")
    scores = np.sqrt(g[:, 0] ** 2 + g[:, 1] ** 2)
    order = np.argsort(-scores, kind="stable")
    return [SensitivityEntry(int(i), float(scores[i])) for i in order]


def classifier_oracle(params):
    """Label-only view of a trained classifier."""
    return lambda points: clf.predict(params, points)


class _Oracle:
    def __init__(self, fn, budget):
        self.fn = fn
        self.budget = budget
        self.count = 0

    @property
    def exhausted(self):
        return self.budget > 0 and self.count >= self.budget

    def __call__(self, points):
        self.count += 1
        return self.fn(points)


def blackbox_attack(surrogate, target: Callable, X, t, cfg: BlackboxConfig):
    """Run the black-box attack. ``result.queries`` is the number of target calls.

    ``result.extra`` carries the bookkeeping: points probed, probe queries and
    refinement queries, with queries == 1 + probes + refine_queries.
    """
    t0 = time.perf_counter()
    if isinstance(X, PointCloud) and X.normals is not None:
        cloud = X
    else:
        cloud = estimate_normals(X.points if isinstance(X, PointCloud) else X, cfg.k)
    x = cloud.points
    oracle = _Oracle(target, cfg.budget)
    if oracle(x) != t:
        raise AttackPreconditionError("target already misclassifies the clean cloud")

    regs = _Regularizers(cloud, cfg.regularizers, cfg.k)
    yp, R = rsi_transform(cloud)
    _, g_clean, _ = clf.margin_and_gradient(surrogate, x, t)
    g = to_frame(g_clean, R)
    gnorm = np.linalg.norm(g)
    g_hat = g.ravel() / gnorm if gnorm > 0 else None
    ranking = sensitivity_map(g)

    best, best_val, history = None, np.inf, []
    probed = probes = refine_q = 0
    adversarial = False

    def consider(candidate_clean):
        nonlocal best, best_val
        total = regs.total(candidate_clean)
        if total < best_val:
            best, best_val = candidate_clean.copy(), total
            history.append(total)

    for entry in ranking:
        if adversarial or oracle.exhausted:
            break
        i = entry.index
        theta = np.arctan2(g[i, 1], g[i, 0])
        q = np.zeros_like(yp)
        q[i] = (np.cos(theta), np.sin(theta), 0.0)
        probed += 1
        for eta in (-cfg.eps1, cfg.eps1):
            if oracle.exhausted:
                break
            cand = yp - eta * q
            probes += 1
            if oracle(rsi_inverse(cand, R)) != t:
                yp = cand
                adversarial = True
                break
        if not adversarial:
            # keep the surrogate-descent probe and move on to the next point
            yp = yp - cfg.eps1 * q
            continue

        y_clean = rsi_inverse(yp, R)
        consider(y_clean)
        _, grads = regs.evaluate(y_clean, with_grad=True)
        d_hats = [normalize(to_frame(grads[r], R).ravel()) for r in regs.regs]
        d_hats = [d for d in d_hats if np.linalg.norm(d) > 0]
        if g_hat is None:
            dirs = [d_hats[0]] + gram_schmidt(d_hats) if d_hats else []
        else:
            dirs = gram_schmidt([g_hat] + d_hats) if d_hats else []
        for v in dirs:
            if oracle.exhausted:
                break
            yp = yp - cfg.eps2 * v.reshape(yp.shape)
            y_clean = rsi_inverse(yp, R)
            refine_q += 1
            adversarial = oracle(y_clean) != t
            if adversarial:
                consider(y_clean)

    success = best is not None
    dists = M.all_distances(x, best, cfg.k, regs.clean) if success else {m: float("nan") for m in M.METRICS}
    return AttackResult(best, success, dists, probed, time.perf_counter() - t0,
                        best_history=history, queries=oracle.count,
                        extra={"points_probed": probed, "probes": probes, "refine_queries": refine_q})
