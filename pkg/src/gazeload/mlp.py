"""Multi-layer perceptron with tanh hidden layers, sigmoid output, Adam training.

Everything is float64 numpy. The functional core (``init_model``,
``forward``, ``backward``, ``adam_step``, ``train``) is wrapped by
:class:`TanhMLPClassifier` for sklearn-style use.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import BadModelFile, DimensionMismatch, SingleClassData

DEFAULT_HIDDEN = (256, 128, 64, 32, 16)
GLMN_MAGIC = b"GLMN"
GLMN_VERSION = 1
ACTIVATION_TAGS = {"tanh": 0, "sigmoid": 1}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple = DEFAULT_HIDDEN
    learning_rate: float = 1e-5
    epochs: int = 500
    batch_size: int = 256
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer widths must be >= 1")


@dataclass
class MlpModel:
    weights: list            # layer k: (fan_in, fan_out)
    biases: list             # layer k: (fan_out,)
    activations: tuple       # "tanh" for hidden layers, "sigmoid" last
    loss_history: list = field(default_factory=list)
    accuracy_history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...] (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activations, list(self.loss_history),
                        list(self.accuracy_history), dict(self.meta))


def init_model(cfg, input_dim):
    """Glorot-uniform weights, zero biases; deterministic in ``cfg.seed``."""
    if input_dim < 1:
        raise DimensionMismatch("input_dim must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    dims = [int(input_dim), *cfg.hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    acts = ("tanh",) * len(cfg.hidden_sizes) + ("sigmoid",)
    return MlpModel(weights, biases, acts, meta={"config": _config_dict(cfg)})


def _config_dict(cfg):
    d = asdict(cfg)
    d["hidden_sizes"] = list(cfg.hidden_sizes)
    return d


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected {model.input_dim} inputs, got {x.shape[1]}")
    return x, single


def _forward_pass(model, x):
    """Hidden activations (input included) and the output logits."""
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    z = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    return acts, z


def forward(model, x):
    """P(high load) for one input vector (float) or a batch (1-D array)."""
    x, single = _as_batch(model, x)
    _, z = _forward_pass(model, x)
    p = _sigmoid(z)
    return float(p[0]) if single else p


def bce_from_logits(z, y):
    # softplus(z) - y*z == -[y log s(z) + (1-y) log(1-s(z))], without overflow
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def backward(model, x, y):
    """Mean binary cross-entropy and its gradients.

    Returns ``(grads, loss)`` with ``grads`` laid out like
    :meth:`MlpModel.parameters`.
    """
    grads, loss, _ = _backward(model, x, y)
    return grads, loss


def _backward(model, x, y):
    x, _ = _as_batch(model, x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    acts, z = _forward_pass(model, x)
    loss = bce_from_logits(z, y)
    delta = ((_sigmoid(z) - y) / x.shape[0])[:, None]
    grads = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        a = acts[k]
        grads[2 * k] = a.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (1.0 - a * a)
    return grads, loss, z


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, model):
        return cls([np.zeros_like(p) for p in model.parameters()],
                   [np.zeros_like(p) for p in model.parameters()], 0)


def adam_step(model, grads, state, cfg):
    """One bias-corrected Adam update, applied in place. Returns (model, state)."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(model.parameters(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return model, state


def epoch_order(seed, epoch, n):
    """Row order for one epoch; depends only on (seed, epoch, n)."""
    return np.random.default_rng([int(seed), 1, int(epoch)]).permutation(n)


def _check_training_data(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("training inputs must be a non-empty (n, d) matrix with n labels")
    if len(np.unique(y)) < 2:
        raise SingleClassData("training data contains a single class")
    return x, y


def fit_epochs(model, x, y, cfg, orders, state=None):
    """Run one epoch per entry of ``orders`` (each a row permutation)."""
    state = state or AdamState.zeros_like(model)
    for order in orders:
        loss_sum = 0.0
        correct = 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            grads, loss, z = _backward(model, xb, yb)
            # running accuracy, from the pre-update parameters of each batch
            correct += int(np.sum((z >= 0) == (yb >= 0.5)))
            loss_sum += loss * len(idx)
            adam_step(model, grads, state, cfg)
        model.loss_history.append(loss_sum / len(order))
        model.accuracy_history.append(correct / len(order))
    return model, state


def train(x, y, cfg=MlpConfig()):
    """Train from scratch for ``cfg.epochs`` epochs of seeded mini-batch Adam.

    The final partial batch of each epoch is used. Same seed, data and
    config give a bit-identical model.
    """
    x, y = _check_training_data(x, y)
    model = init_model(cfg, x.shape[1])
    orders = (epoch_order(cfg.seed, e, x.shape[0]) for e in range(cfg.epochs))
    fit_epochs(model, x, y, cfg, orders)
    return model


# -- persistence ------------------------------------------------------------

def save_model(model, path):
    """Write the GLMN container.

    Layout (little-endian): ``b"GLMN"``, u32 version, u32 layer count; per
    layer u32 fan_in, u32 fan_out, u8 activation tag (0 tanh, 1 sigmoid);
    then per layer fan_in*fan_out f64 weights (row-major) followed by
    fan_out f64 biases; u32 epoch count, that many f64 losses, that many f64
    accuracies; u32 byte length + UTF-8 JSON metadata.
    """
    with open(path, "wb") as fh:
        fh.write(GLMN_MAGIC + struct.pack("<II", GLMN_VERSION, len(model.weights)))
        for w, act in zip(model.weights, model.activations):
            fh.write(struct.pack("<IIB", w.shape[0], w.shape[1], ACTIVATION_TAGS[act]))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, "<f8").tobytes())
            fh.write(np.ascontiguousarray(b, "<f8").tobytes())
        n = len(model.loss_history)
        fh.write(struct.pack("<I", n))
        fh.write(np.asarray(model.loss_history, "<f8").tobytes())
        fh.write(np.asarray(model.accuracy_history, "<f8").tobytes())
        meta = json.dumps(model.meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta)) + meta)


def load_model(path):
    buf = open(path, "rb").read()
    if buf[:4] != GLMN_MAGIC:
        raise BadModelFile(f"{path}: not a GLMN model file")
    try:
        version, n_layers = struct.unpack_from("<II", buf, 4)
        if version != GLMN_VERSION:
            raise BadModelFile(f"{path}: unsupported GLMN version {version}")
        off = 12
        shapes, acts = [], []
        for _ in range(n_layers):
            fi, fo, tag = struct.unpack_from("<IIB", buf, off)
            shapes.append((fi, fo))
            acts.append(_TAG_NAMES[tag])
            off += 9
        weights, biases = [], []
        for fi, fo in shapes:
            weights.append(np.frombuffer(buf, "<f8", fi * fo, off).reshape(fi, fo).copy())
            off += 8 * fi * fo
            biases.append(np.frombuffer(buf, "<f8", fo, off).copy())
            off += 8 * fo
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        loss = np.frombuffer(buf, "<f8", n, off).tolist()
        off += 8 * n
        acc = np.frombuffer(buf, "<f8", n, off).tolist()
        off += 8 * n
        (ln,) = struct.unpack_from("<I", buf, off)
        meta = json.loads(buf[off + 4:off + 4 + ln].decode("utf-8"))
    except (struct.error, ValueError, KeyError) as exc:
        raise BadModelFile(f"{path}: corrupt GLMN file ({exc})") from exc
    for (fi, fo), w in zip(shapes[1:], weights[:-1]):
        if w.shape[1] != fi:
            raise BadModelFile(f"{path}: layer dimensions do not chain")
    return MlpModel(weights, biases, tuple(acts), loss, acc, meta)


# -- estimator --------------------------------------------------------------

class TanhMLPClassifier(ClassifierMixin, BaseEstimator):
    """Binary MLP classifier; defaults give five tanh hidden layers narrowing from 256 to 16."""

    def __init__(self, hidden_sizes=DEFAULT_HIDDEN, learning_rate=1e-5, epochs=500,
                 batch_size=256, seed=0, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps

    def _config(self):
        return MlpConfig(tuple(self.hidden_sizes), self.learning_rate, self.epochs,
                         self.batch_size, self.seed, self.adam_beta1, self.adam_beta2,
                         self.adam_eps)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise SingleClassData(f"need exactly two classes, got {len(self.classes_)}")
        self.model_ = train(X, (y == self.classes_[1]).astype(np.float64), self._config())
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model, classes=(0, 1)):
        cfg = model.meta.get("config", {})
        est = cls(**{k: (tuple(v) if k == "hidden_sizes" else v) for k, v in cfg.items()})
        est.model_ = model
        est.classes_ = np.asarray(classes)
        est.n_features_in_ = model.input_dim
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        p = forward(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p >= threshold).astype(int)]
