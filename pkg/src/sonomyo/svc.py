"""
One-vs-rest linear support vector classifier.

Each class ``c`` gets a hyperplane ``(w_c, b_c)`` minimizing the primal
objective::

    lam / 2 * |w_c|^2 + mean(max(0, 1 - y_i * (w_c . x_i + b_c)))

with ``y_i = +1`` for samples of class ``c`` and ``-1`` otherwise. Training
is seeded mini-batch subgradient descent with step ``1 / (lam * (t + t0))``.
All classes are updated together from the same shuffled batches; because the
per-class objectives share nothing, this is the same as training them one at
a time. At every epoch end the objective is evaluated on the full training
set and the best iterate seen so far is kept for each class.

Model file layout (all integers and floats little-endian)::

    8s   magic b"SONOSVC\\0"
    u32  format version (1)
    u32  number of classes C
    C x (u16 byte length, utf-8 class id)
    u64  feature dimension D
    f64  lam
    u64  seed
    u32  epochs
    u32  batch size
    f64  test split fraction
    C*D f64  weights, class-major
    C   f64  biases
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateLabels, ModelFormatError, ShapeError
from .metrics import ConfusionMatrix

MAGIC = b"SONOSVC\0"
VERSION = 1


def _natural_key(label):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", str(label))]


@dataclass
class SvcModel:
    classes: tuple
    weights: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)
    lam: float
    train_meta: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        c = len(self.classes)
        if self.weights.ndim != 2 or self.weights.shape[0] != c or self.biases.size != c:
            raise ShapeError("one weight vector and one bias per class required")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("non-finite SVC parameters")

    @property
    def feature_dim(self):
        return self.weights.shape[1]

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.feature_dim:
            raise ShapeError(
                f"expected {self.feature_dim} features, got {X.shape[-1]}")
        return X @ self.weights.T + self.biases

    def predict(self, X):
        """Class ids for a ``(n, D)`` feature matrix."""
        scores = self.decision_function(np.atleast_2d(X))
        return [self.classes[k] for k in np.argmax(scores, axis=1)]

    def objective(self, X, labels):
        Y = _signs(labels, self.classes)
        return _objective(self.weights, self.biases, np.asarray(X, float), Y,
                          self.lam)

    def to_bytes(self):
        meta = self.train_meta
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.classes))]
        for c in self.classes:
            raw = str(c).encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(
            "<QdQIId", self.feature_dim, self.lam, int(meta.get("seed", 0)),
            int(meta.get("epochs", 0)), int(meta.get("batch_size", 0)),
            float(meta.get("split", 0.0))))
        parts.append(self.weights.astype("<f8").tobytes())
        parts.append(self.biases.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw):
        if raw[:8] != MAGIC:
            raise ModelFormatError("not an SVC model file (bad magic)")
        try:
            version, n = struct.unpack_from("<II", raw, 8)
            if version != VERSION:
                raise ModelFormatError(f"unsupported SVC model version {version}")
            pos = 16
            classes = []
            for _ in range(n):
                (length,) = struct.unpack_from("<H", raw, pos)
                classes.append(raw[pos + 2:pos + 2 + length].decode("utf-8"))
                pos += 2 + length
            d, lam, seed, epochs, batch, split = struct.unpack_from("<QdQIId", raw, pos)
            pos += struct.calcsize("<QdQIId")
            w = np.frombuffer(raw, "<f8", n * d, pos).reshape(n, d)
            b = np.frombuffer(raw, "<f8", n, pos + 8 * n * d)
        except (struct.error, ValueError) as exc:
            raise ModelFormatError(f"truncated SVC model file: {exc}") from None
        if pos + 8 * n * (d + 1) != len(raw):
            raise ModelFormatError("trailing bytes in SVC model file")
        meta = {"seed": seed, "epochs": epochs, "batch_size": batch, "split": split}
        return cls(classes, w.copy(), b.copy(), lam, meta)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def _signs(labels, classes):
    labels = np.asarray(list(labels), dtype=object)
    return np.where(labels[:, None] == np.asarray(classes, dtype=object)[None, :],
                    1.0, -1.0)


def _objective(W, b, X, Y, lam):
    """Per-class primal objective, shape ``(C,)``."""
    margins = Y * (X @ W.T + b)
    return 0.5 * lam * np.sum(W * W, axis=1) + np.maximum(0, 1 - margins).mean(axis=0)


def train_svc(X, labels, lam=1e-4, epochs=20, seed=0, batch_size=64,
              classes=None, split=0.3):
    """Fit a one-vs-rest linear SVM.

    Parameters
    ----------
    X : ndarray, shape (n, D)
        Feature vectors, typically flattened preprocessed frames.
    labels : sequence, length n
        Class id per row.
    lam : float
        L2 regularization strength.
    epochs : int
        Passes over the shuffled data.
    seed : int
        Seeds the per-epoch shuffles; training is otherwise deterministic.
    batch_size : int
        Samples per subgradient step.
    classes : sequence, optional
        Class order; defaults to the labels in natural sort order.
    split : float
        Test fraction used to produce ``X``; only recorded in the metadata.

    Returns
    -------
    SvcModel
        ``model.history`` holds the per-epoch objective of each class
        (``"objective"``) and its running minimum (``"best"``).
    """
    try:
        X = np.asarray(X, dtype=np.float64)
    except ValueError:
        raise ShapeError("feature vectors differ in length") from None
    labels = list(labels)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ShapeError("features must be (n, D) with one label per row")
    if not lam > 0:
        raise ValueError("lam must be positive")
    present = sorted(set(labels), key=_natural_key)
    if len(present) < 2:
        raise DegenerateLabels(f"need at least 2 classes, got {present}")
    classes = tuple(present if classes is None else classes)
    unknown = set(present) - set(classes)
    if unknown:
        raise DegenerateLabels(f"labels outside the class list: {sorted(unknown, key=str)}")

    n, d = X.shape
    Y = _signs(labels, classes)
    W = np.zeros((len(classes), d))
    b = np.zeros(len(classes))
    eta0 = 1.0 / max(1.0, float(np.mean(np.sum(X * X, axis=1))))
    t0 = max(1.0, np.ceil(1.0 / (lam * eta0)))
    batch_size = max(1, min(int(batch_size), n))

    objective = [_objective(W, b, X, Y, lam)]
    best = [objective[0].copy()]
    best_W, best_b = W.copy(), b.copy()
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            Xb, Yb = X[idx], Y[idx]
            active = (Yb * (Xb @ W.T + b) < 1) * Yb  # (B, C)
            grad_w = lam * W - active.T @ Xb / idx.size
            grad_b = -active.sum(axis=0) / idx.size
            t += 1
            eta = 1.0 / (lam * (t + t0))
            W -= eta * grad_w
            # the bias is not regularized, so it gets the plain 1/sqrt(t)
            # schedule; 1/(lam t) would freeze it when lam is large
            b -= max(eta, 1.0 / np.sqrt(t)) * grad_b
        obj = _objective(W, b, X, Y, lam)
        better = obj < best[-1]
        best_W[better], best_b[better] = W[better], b[better]
        objective.append(obj)
        best.append(np.minimum(best[-1], obj))

    meta = {"seed": int(seed), "epochs": int(epochs),
            "batch_size": int(batch_size), "split": float(split)}
    model = SvcModel(classes, best_W, best_b, float(lam), meta)
    model.history = {"objective": np.array(objective), "best": np.array(best)}
    return model


def predict_svc(model: SvcModel, features):
    """Return ``(class id, scores)`` for one feature vector.

    Ties between scores go to the earliest class in ``model.classes``.
    """
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    scores = model.decision_function(x)
    return model.classes[int(np.argmax(scores))], scores


def confusion(model: SvcModel, X, labels) -> ConfusionMatrix:
    return ConfusionMatrix.from_labels(labels, model.predict(X), model.classes)


def shuffled_split(n, test_fraction=0.3, seed=0):
    """Shuffled ``(train_idx, test_idx)`` with ``round(n * test_fraction)`` test rows."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(order[n_test:]), np.sort(order[:n_test])
