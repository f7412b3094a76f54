"""One-vs-all linear SVMs trained by dual coordinate descent.

Each binary problem is the L2-regularized hinge-loss SVM with the bias
folded in as a constant feature of value 1. With few samples and long
encodings the solver works on the Gram matrix: every coordinate step
costs O(n) and the primal margins are read off ``Q @ alpha`` directly,
which also gives the exact duality gap used as the stopping rule.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .binfmt import Reader, pack_name

SVM_MAGIC = b"TSVM"


@dataclass
class BinaryResult:
    alpha: np.ndarray
    primal: float
    dual: float
    sweeps: int
    dual_history: list = field(default_factory=list)

    @property
    def gap(self):
        return self.primal - self.dual


def solve_dual(gram, y, C=100.0, tol=1e-4, max_sweeps=100000, seed=0):
    """Maximize sum(a) - a'Qa/2 over 0 <= a <= C, Q = (y y') * gram.

    Stops once the duality gap is at most ``tol``. The coordinate order is
    one seeded permutation reused for every sweep.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    Q = gram * np.outer(y, y)
    diag = np.diag(Q).copy()
    order = np.random.default_rng(seed).permutation(n)
    alpha = np.zeros(n)
    qa = np.zeros(n)
    history = []

    def objectives():
        aqa = float(alpha @ qa)
        dual = alpha.sum() - 0.5 * aqa
        primal = 0.5 * aqa + C * np.maximum(0.0, 1.0 - qa).sum()
        return primal, dual

    primal, dual = objectives()
    sweeps = 0
    while primal - dual > tol and sweeps < max_sweeps:
        for i in order:
            if diag[i] <= 0:
                continue
            g = qa[i] - 1.0
            new = min(max(alpha[i] - g / diag[i], 0.0), C)
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                qa += delta * Q[:, i]
        sweeps += 1
        # refresh to stop rounding drift in the running product
        qa = Q @ alpha
        primal, dual = objectives()
        history.append(dual)
    return BinaryResult(alpha, primal, dual, sweeps, history)


@dataclass
class LinearModel:
    classes: list
    weights: np.ndarray  # (n_classes, dim)
    biases: np.ndarray  # (n_classes,)
    C: float = 100.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.weights.shape[1]

    def to_bytes(self):
        out = [SVM_MAGIC, struct.pack("<I", len(self.classes))]
        out += [pack_name(str(c)) for c in self.classes]
        out.append(struct.pack("<Id", self.dim, self.C))
        out.append(self.weights.astype("<f4").tobytes())
        out.append(self.biases.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, source=""):
        r = Reader(data, source)
        r.magic(SVM_MAGIC)
        (n,) = r.unpack("<I")
        classes = [r.name() for _ in range(n)]
        dim, C = r.unpack("<Id")
        w = r.array("<f4", n * dim).astype(np.float64).reshape(n, dim)
        b = r.array("<f4", n).astype(np.float64)
        r.expect_end()
        return cls(classes, w, b, C)


def train_one_vs_all(encodings, labels, C=100.0, tol=1e-4, seed=0, classes=None):
    """One binary SVM per class (class vs. rest)."""
    x = np.asarray(encodings, dtype=np.float64)
    labels = list(labels)
    if x.ndim != 2:
        raise ValueError("encodings must be an (n, dim) matrix")
    if len(labels) != len(x):
        raise ValueError("labels and encodings differ in length")
    classes = sorted(set(labels)) if classes is None else list(classes)
    if len(set(labels)) < 2:
        raise ValueError("need at least two classes to train one-vs-all")
    lab = np.array(labels, dtype=object)
    gram = x @ x.T + 1.0
    weights = np.zeros((len(classes), x.shape[1]))
    biases = np.zeros(len(classes))
    diag = {}
    for j, c in enumerate(classes):
        y = np.where(lab == c, 1.0, -1.0)
        res = solve_dual(gram, y, C, tol, seed=seed)
        coef = res.alpha * y
        weights[j] = coef @ x
        biases[j] = coef.sum()
        diag[c] = res
    return LinearModel(classes, weights, biases, C, diag)


def predict_scores(model, encodings):
    """Decision values (n, n_classes) and argmax labels (first class on ties)."""
    x = np.asarray(encodings, dtype=np.float64)
    if x.size == 0:
        return np.zeros((0, len(model.classes))), []
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.dim:
        raise ValueError(f"encoding dimension {x.shape[1]} does not match model dimension {model.dim}")
    scores = x @ model.weights.T + model.biases
    return scores, [model.classes[i] for i in np.argmax(scores, axis=1)]
