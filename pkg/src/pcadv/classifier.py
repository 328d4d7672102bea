"""Small permutation-invariant point-cloud classifier with a hand-written backward pass.

Architecture: a shared per-point encoder ``3 -> h1 -> h2`` (affine + tanh),
coordinatewise max over points, then a head ``h2 -> h3 -> c`` (affine + tanh,
affine). Everything is float64 numpy.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import PointCloud

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_WIDTHS = (3, 32, 64, 32)
ACTIVATION = "tanh"
_NAMES = ("enc1", "enc2", "head1", "out")


class CheckpointFormatError(ValueError):
    pass


@dataclass(eq=False)
class ClassifierParams:
    widths: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = ACTIVATION

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        validate(self)

    @property
    def num_classes(self):
        return self.widths[-1]

    def copy(self):
        return ClassifierParams(self.widths, [w.copy() for w in self.weights],
                                [b.copy() for b in self.biases], self.activation)

    def equals(self, other):
        return (self.widths == other.widths and self.activation == other.activation
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def validate(params):
    w = params.widths
    if len(w) != 5 or w[0] != 3:
        raise CheckpointFormatError(f"widths must be (3, h1, h2, h3, c), got {w}")
    if w[-1] < 2:
        raise CheckpointFormatError("classifier needs at least 2 classes")
    if params.activation != ACTIVATION:
        raise CheckpointFormatError(f"unsupported activation {params.activation!r}")
    if len(params.weights) != 4 or len(params.biases) != 4:
        raise CheckpointFormatError("expected 4 weight matrices and 4 bias vectors")
    for i in range(4):
        W, b = params.weights[i], params.biases[i]
        if W.shape != (w[i], w[i + 1]) or b.shape != (w[i + 1],):
            raise CheckpointFormatError(
                f"layer {_NAMES[i]}: expected W{(w[i], w[i + 1])} b{(w[i + 1],)}, "
                f"got W{W.shape} b{b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise CheckpointFormatError(f"layer {_NAMES[i]} has non-finite entries")


def init_params(num_classes, seed=0, hidden=DEFAULT_WIDTHS[1:]):
    """Glorot-uniform weights, zero biases."""
    widths = (3, *hidden, num_classes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ClassifierParams(widths, weights, biases)


def _pts(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def _forward_batch(params, X):
    """X: (B, n, 3). Returns logits and the cache needed for backprop."""
    W1, W2, W3, W4 = params.weights
    b1, b2, b3, b4 = params.biases
    h1 = np.tanh(X @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    arg = np.argmax(h2, axis=1)                       # (B, h2); lowest index on ties
    pooled = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
    h3 = np.tanh(pooled @ W3 + b3)
    logits = h3 @ W4 + b4
    return logits, (X, h1, h2, arg, pooled, h3)


def _backward_batch(params, cache, dlogits, need_params=True):
    """Backprop dlogits (B, c). Returns (d_input, d_weights, d_biases)."""
    W1, W2, W3, W4 = params.weights
    X, h1, h2, arg, pooled, h3 = cache
    B, n, _ = X.shape
    da3 = (dlogits @ W4.T) * (1.0 - h3 ** 2)
    dpool = da3 @ W3.T
    if not need_params:
        return _input_grad_sparse(params, cache, dpool), None, None
    # max-pool routes each feature's gradient to its argmax point only
    dh2 = np.zeros_like(h2)
    bi = np.repeat(np.arange(B), arg.shape[1])
    fi = np.tile(np.arange(arg.shape[1]), B)
    dh2[bi, arg.ravel(), fi] = dpool.ravel()
    da2 = dh2 * (1.0 - h2 ** 2)
    da1 = (da2 @ W2.T) * (1.0 - h1 ** 2)
    dX = da1 @ W1.T
    dW = [
        np.einsum("bni,bnj->ij", X, da1),
        np.einsum("bni,bnj->ij", h1, da2),
        pooled.T @ da3,
        h3.T @ dlogits,
    ]
    db = [da1.sum(axis=(0, 1)), da2.sum(axis=(0, 1)), da3.sum(axis=0), dlogits.sum(axis=0)]
    return dX, dW, db


def _input_grad_sparse(params, cache, dpool):
    """Input gradient touching only the max-pool winners.

    Feature f of cloud b reaches the input through point arg[b, f] alone, so
    the per-point layers are evaluated on (B, h2) gathered rows instead of the
    full (B, n, h2) activations.
    """
    W1, W2 = params.weights[:2]
    X, h1, h2, arg, pooled, _ = cache
    B, F = arg.shape
    bi = np.arange(B)[:, None]
    da2 = dpool * (1.0 - pooled ** 2)                       # (B, F)
    h1w = h1[bi, arg]                                       # (B, F, h1)
    da1 = da2[..., None] * W2.T[None] * (1.0 - h1w ** 2)    # (B, F, h1)
    rows = da1 @ W1.T                                       # (B, F, 3)
    dX = np.zeros_like(X)
    np.add.at(dX, (np.repeat(np.arange(B), F), arg.ravel()), rows.reshape(-1, 3))
    return dX


def forward(params, cloud):
    pts = _pts(cloud)
    if len(pts) == 0:
        raise ValueError("forward needs a nonempty cloud")
    logits, _ = _forward_batch(params, pts[None])
    return logits[0]


def forward_batch(params, clouds):
    """Logits for a stack of equal-size clouds, shape (B, c)."""
    return _forward_batch(params, np.asarray(clouds, dtype=np.float64))[0]


def argmax_label(logits):
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(logits))


def predict(params, cloud):
    return argmax_label(forward(params, cloud))


def margin_loss(logits, t):
    """True-class logit minus the best other logit; negative iff misclassified."""
    logits = np.asarray(logits, dtype=np.float64)
    c = len(logits)
    if c < 2:
        raise ValueError("margin loss needs at least two classes")
    if not 0 <= t < c:
        raise ValueError(f"label {t} out of range for {c} classes")
    others = np.delete(logits, t)
    return float(logits[t] - others.max())


def _margin_dlogits(logits, t):
    """d(margin)/d(logits) for rows of logits, with ties going to the lowest other class."""
    masked = logits.copy()
    rows = np.arange(len(logits))
    masked[rows, t] = -np.inf
    other = np.argmax(masked, axis=1)
    d = np.zeros_like(logits)
    d[rows, t] = 1.0
    d[rows, other] -= 1.0
    return d


def margin_and_gradient(params, cloud, t):
    """Margin loss, its input gradient (n, 3) and the logits, in one pass."""
    pts = _pts(cloud)
    logits, cache = _forward_batch(params, pts[None])
    loss = margin_loss(logits[0], t)
    dX, _, _ = _backward_batch(params, cache, _margin_dlogits(logits, np.array([t])), need_params=False)
    return loss, dX[0], logits[0]


def margin_gradient_batch(params, clouds, t):
    """Input gradients of the margin loss for a stack of equal-size clouds."""
    X = np.asarray(clouds, dtype=np.float64)
    logits, cache = _forward_batch(params, X)
    tt = np.full(len(X), t)
    dX, _, _ = _backward_batch(params, cache, _margin_dlogits(logits, tt), need_params=False)
    return dX, logits


def input_gradient(params, cloud, t):
    """Gradient of the margin loss with respect to the input coordinates."""
    from .metrics import GradientField

    _, g, _ = margin_and_gradient(params, cloud, t)
    return GradientField(g, "margin loss; max-pool and runner-up class routing frozen")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    hidden: Tuple[int, ...] = DEFAULT_WIDTHS[1:]

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(eq=False)
class TrainResult:
    params: ClassifierParams
    accuracy: float
    losses: List[float] = field(default_factory=list)


def _softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    loss = -np.mean(np.log(p[rows, labels]))
    d = p.copy()
    d[rows, labels] -= 1.0
    return loss, d / len(labels)


def _stack(dataset):
    clouds = [_pts(c) for c, _ in dataset]
    sizes = {len(c) for c in clouds}
    if len(sizes) != 1:
        raise ValueError(f"training clouds must share one size, got sizes {sorted(sizes)}")
    X = np.stack(clouds)
    y = np.array([int(lbl) for _, lbl in dataset], dtype=np.int64)
    return X, y


def evaluate(params, X, y, batch=64):
    losses, correct = [], 0
    for s in range(0, len(X), batch):
        logits = forward_batch(params, X[s:s + batch])
        loss, _ = _softmax_xent(logits, y[s:s + batch])
        losses.append(loss * len(logits))
        correct += int(np.sum(np.argmax(logits, axis=1) == y[s:s + batch]))
    return float(np.sum(losses) / len(X)), correct / len(X)


def train(dataset: Sequence, cfg: TrainConfig) -> TrainResult:
    """Softmax cross-entropy with momentum SGD, deterministic per ``cfg.seed``."""
    X, y = _stack(dataset)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training set needs at least two classes")
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(int(y.max()) + 1, np.random.default_rng(init_seq), cfg.hidden)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    losses = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(X))
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            logits, cache = _forward_batch(params, X[idx])
            _, dlogits = _softmax_xent(logits, y[idx])
            _, dW, db = _backward_batch(params, cache, dlogits)
            for i in range(4):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.lr * dW[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.lr * db[i]
                params.weights[i] += vel_w[i]
                params.biases[i] += vel_b[i]
        loss, acc = evaluate(params, X, y)
        losses.append(loss)
        log.info("epoch %d loss %.5f acc %.4f", epoch + 1, loss, acc)
    return TrainResult(params, acc, losses)


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------
# JSON document; floats are written with Python's shortest round-trip repr, so
# load(save(p)) reproduces every weight bit for bit.

def save(params):
    doc = {
        "format_version": FORMAT_VERSION,
        "widths": list(params.widths),
        "activation": params.activation,
        "layers": [
            {"name": _NAMES[i], "weight_shape": list(W.shape), "weight": W.ravel().tolist(),
             "bias": b.tolist()}
            for i, (W, b) in enumerate(zip(params.weights, params.biases))
        ],
    }
    return json.dumps(doc).encode("utf-8")


def load(data):
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {doc.get('format_version') if isinstance(doc, dict) else None!r}")
    try:
        widths = tuple(int(w) for w in doc["widths"])
        weights, biases = [], []
        for layer in doc["layers"]:
            shape = tuple(int(s) for s in layer["weight_shape"])
            flat = np.array(layer["weight"], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise CheckpointFormatError(f"layer {layer.get('name')}: data does not fill shape {shape}")
            weights.append(flat.reshape(shape))
            biases.append(np.array(layer["bias"], dtype=np.float64))
        return ClassifierParams(widths, weights, biases, doc["activation"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"malformed checkpoint: {exc}") from None


def save_file(params, path):
    with open(path, "wb") as fh:
        fh.write(save(params))


def load_file(path):
    with open(path, "rb") as fh:
        return load(fh.read())
