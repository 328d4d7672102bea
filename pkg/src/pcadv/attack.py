"""Two-phase boundary attacks on point-cloud classifiers.

While the current cloud is still classified correctly (IN phase) it moves
down the normalised margin-loss gradient. Once it is adversarial (OUT
phase) it moves along regularizer descent directions made orthogonal to the
loss gradient, so distortion shrinks while the cloud stays on the boundary.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import classifier as clf
from . import metrics as M
from .classifier import margin_loss  # noqa: F401  (re-exported)
from .geometry import DEFAULT_K, PointCloud

IN, OUT = "IN", "OUT"
GS_DROP_TOL = 1e-8
GRAD_UNDERFLOW = 1e-12


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass
class AttackConfig:
    regularizers: Sequence[str] = (M.L2,)
    step: float = 0.06
    schedule: str = "fixed"
    decay: float = 0.05
    max_iters: int = 100
    k: int = DEFAULT_K
    seed: int = 0
    # "first_hit": the adaptive decay clock starts at the first adversarial
    # iterate; "start": it starts at iteration 0
    decay_from: str = "first_hit"

    def __post_init__(self):
        self.regularizers = tuple(M.regularizer_id(r) for r in self.regularizers)
        if not self.regularizers:
            raise ValueError("at least one regularizer is required")
        if len(set(self.regularizers)) != len(self.regularizers):
            raise ValueError(f"duplicate regularizers in {self.regularizers}")
        if self.step <= 0:
            raise ValueError("step size must be positive")
        if self.schedule not in ("fixed", "adaptive"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "adaptive" and not 0.0 < self.decay < 1.0:
            raise ValueError("adaptive decay must lie in (0, 1)")
        if self.decay_from not in ("first_hit", "start"):
            raise ValueError(f"unknown decay_from {self.decay_from!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class TraceRow:
    iteration: int
    phase: str
    loss: float
    dist_sum: float
    cosines: List[float]


@dataclass(eq=False)
class AttackResult:
    best: Optional[np.ndarray]
    success: bool
    distances: Dict[str, float]
    iterations: int
    wall_time: float
    trace: List[TraceRow] = field(default_factory=list)
    stalled: bool = False
    best_history: List[float] = field(default_factory=list)
    queries: int = 0
    extra: dict = field(default_factory=dict)

    def trace_lines(self):
        """Tab-separated trace: iteration, phase, loss, sum of D_j, cosines."""
        out = []
        for r in self.trace:
            cells = [str(r.iteration), r.phase, repr(r.loss), repr(r.dist_sum)]
            cells += [repr(c) for c in r.cosines]
            out.append("\t".join(cells) + "\n")
        return "".join(out)


class AttackPreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def step_size(i, cfg):
    if i < 0:
        raise ValueError("iteration index must be >= 0")
    if cfg.schedule == "fixed":
        return cfg.step
    return cfg.step * (1.0 - cfg.decay) ** i


class _Clock:
    """Maps the loop counter to the schedule index."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.origin = 0 if cfg.decay_from == "start" else None

    def eps(self, it, adversarial):
        if adversarial and self.origin is None:
            self.origin = it
        return step_size(0 if self.origin is None else it - self.origin, self.cfg)


def normalize(v):
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def gram_schmidt(vectors, tol=GS_DROP_TOL):
    """Orthonormalise ``vectors`` in order and drop the first output.

    The first entry is the (normalised) loss gradient; the result holds the
    remaining directions, each orthogonal to it and to one another. Entries
    whose residual falls below ``tol`` are dropped.
    """
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vecs:
        raise ValueError("gram_schmidt needs at least one vector")
    dim = vecs[0].size
    if dim == 0 or any(v.size != dim for v in vecs):
        raise ValueError("gram_schmidt needs nonempty vectors of equal length")
    first = vecs[0]
    nrm = np.linalg.norm(first)
    if nrm < tol:
        raise ValueError("leading gradient vector is (numerically) zero")
    basis = [first / nrm]
    for v in vecs[1:]:
        # classical GS: every projection uses the original vector
        w = v - sum(np.dot(v, e) * e for e in basis)
        r = np.linalg.norm(w)
        if r < tol:
            continue
        basis.append(w / r)
    return basis[1:]


def cosine(a, b):
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_diagnostics(g, d_list):
    """cos(g, d_j) for every j, then cos(d_j, d_k) for j < k."""
    vals = [cosine(g, d) for d in d_list]
    for j in range(len(d_list)):
        for k in range(j + 1, len(d_list)):
            vals.append(cosine(d_list[j], d_list[k]))
    return vals


# ---------------------------------------------------------------------------
# models: anything that answers "label?" and "margin + input gradient?"
# ---------------------------------------------------------------------------

class ClassifierModel:
    """White-box wrapper around trained parameters."""

    def __init__(self, params):
        self.params = params

    def predict(self, points):
        return clf.predict(self.params, points)

    def margin_and_gradient(self, points, t):
        loss, g, logits = clf.margin_and_gradient(self.params, points, t)
        return loss, g, clf.argmax_label(logits)


def as_model(obj):
    return ClassifierModel(obj) if isinstance(obj, clf.ClassifierParams) else obj


class _Regularizers:
    """Values and frozen-surrogate gradients of the active regularizers, with
    the clean-cloud curvature data computed once."""

    def __init__(self, X, regs, k):
        self.X = X
        self.regs = tuple(regs)
        self.k = k
        self.clean = M.clean_curvature(X, k) if M.CURV in self.regs else None

    def evaluate(self, Y, with_grad=False):
        vals, grads = {}, {}
        for r in self.regs:
            if r == M.CURV:
                state = M.curvature_state(self.X, Y, self.k, self.clean)
                vals[r] = state.value
                if with_grad:
                    grads[r] = M.metric_gradient(r, self.X, Y, self.k, self.clean, state).values
            else:
                vals[r] = M.distance(r, self.X, Y, self.k)
                if with_grad:
                    grads[r] = M.metric_gradient(r, self.X, Y, self.k).values
        return vals, grads

    def total(self, Y):
        return float(sum(self.evaluate(Y)[0].values()))


def _pts(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


def _out_directions(g_hat, d_hats):
    """Unit OUT-phase directions from the loss gradient and regularizer directions."""
    live = [d for d in d_hats if np.linalg.norm(d) > 0]
    if not live:
        return []
    if g_hat is None:
        # no usable loss gradient: orthonormalise the regularizer directions alone
        return [live[0] / np.linalg.norm(live[0])] + gram_schmidt(live)
    return gram_schmidt([g_hat] + live)


def _finish(X, best, success, t0, iters, trace, stalled, history, k, clean=None):
    if success:
        dists = M.all_distances(X, best, k, clean)
    else:
        dists = {m: float("nan") for m in M.METRICS}
    return AttackResult(best, success, dists, iters, time.perf_counter() - t0, trace,
                        stalled, history)


def _check_start(model, x, t):
    if model.predict(x) != t:
        raise AttackPreconditionError("the clean cloud is already misclassified; nothing to attack")


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

def eidos_base(params, X, t, D, cfg):
    """Single-regularizer attack: projected descent on one distance ``D``."""
    D = M.regularizer_id(D)
    model = as_model(params)
    x = _pts(X)
    _check_start(model, x, t)
    regs = _Regularizers(X, (D,), cfg.k)
    t0 = time.perf_counter()

    y = x.copy()
    best, best_val, history, trace = None, np.inf, [], []
    stalled = False
    it = 0
    clock = _Clock(cfg)
    for it in range(cfg.max_iters):
        loss, g, label = model.margin_and_gradient(y, t)
        eps = clock.eps(it, label != t)
        gnorm = np.linalg.norm(g)
        vals, grads = regs.evaluate(y, with_grad=True)
        d = grads[D]
        trace.append(TraceRow(it, IN if label == t else OUT, loss, vals[D], cosine_diagnostics(g, [d])))
        if label == t:
            if gnorm < GRAD_UNDERFLOW:
                stalled = True
                break
            y = y - eps * g / gnorm
        else:
            d_hat = normalize(d.ravel())
            if gnorm < GRAD_UNDERFLOW:
                v = d_hat
            else:
                g_hat = g.ravel() / gnorm
                v = d_hat - np.dot(d_hat, g_hat) * g_hat
            y = y - eps * v.reshape(y.shape)
        if model.predict(y) != t:
            val = regs.evaluate(y)[0][D]
            if val < best_val:
                best, best_val = y.copy(), val
                history.append(val)
    iters = it + 1
    return _finish(x, best, best is not None, t0, iters, trace, stalled, history, cfg.k, regs.clean)


def eidos(params, X, t, cfg):
    """Multi-regularizer attack with Gram-Schmidt orthogonalised OUT steps."""
    model = as_model(params)
    x = _pts(X)
    _check_start(model, x, t)
    regs = _Regularizers(X, cfg.regularizers, cfg.k)
    t0 = time.perf_counter()

    y = x.copy()
    best, best_val, history, trace = None, np.inf, [], []
    stalled = False
    it = 0
    clock = _Clock(cfg)
    for it in range(cfg.max_iters):
        loss, g, label = model.margin_and_gradient(y, t)
        eps = clock.eps(it, label != t)
        gnorm = np.linalg.norm(g)
        vals, grads = regs.evaluate(y, with_grad=True)
        d_list = [grads[r] for r in regs.regs]
        trace.append(TraceRow(it, IN if label == t else OUT, loss, float(sum(vals.values())),
                              cosine_diagnostics(g, d_list)))
        if label == t:
            if gnorm < GRAD_UNDERFLOW:
                stalled = True
                break
            y = y - eps * g / gnorm
            if model.predict(y) != t:
                total = regs.total(y)
                if total < best_val:
                    best, best_val = y.copy(), total
                    history.append(total)
            continue
        g_hat = g.ravel() / gnorm if gnorm >= GRAD_UNDERFLOW else None
        d_hats = [normalize(d.ravel()) for d in d_list]
        for v in _out_directions(g_hat, d_hats):
            y = y - eps * v.reshape(y.shape)
            if model.predict(y) != t:
                total = regs.total(y)
                if total < best_val:
                    best, best_val = y.copy(), total
                    history.append(total)
    iters = it + 1
    return _finish(x, best, best is not None, t0, iters, trace, stalled, history, cfg.k, regs.clean)


def regularizer_sum(X, Y, regs, k=DEFAULT_K):
    return float(sum(M.distance(r, X, Y, k) for r in regs))
