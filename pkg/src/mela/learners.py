"""Base learners: closed-form ridge, global label selection, softmax training.

Feature matrices are ``(N, p)``; classifiers hold ``W`` with one row per
class and an optional bias vector, so ``logits = F @ W.T + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DegenerateDataError, MissingClassError, MissingLabelError


@dataclass(frozen=True)
class RidgeConfig:
    lam: float = 1e-3
    add_bias: bool = True
    target_scale: Callable[[np.ndarray], np.ndarray] = field(default=lambda t: 2.0 * t - 1.0, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("ridge lambda must be positive")

    def targets(self, y: np.ndarray, k: int) -> np.ndarray:
        onehot = np.zeros((len(y), k))
        onehot[np.arange(len(y)), y] = 1.0
        return self.target_scale(onehot)


@dataclass
class TaskClassifier:
    W: np.ndarray
    b: Optional[np.ndarray] = None
    provenance: str = "ridge"

    @property
    def k(self) -> int:
        return self.W.shape[0]

    def logits(self, F: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(F) @ self.W.T
        return out if self.b is None else out + self.b

    def predict(self, F: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return np.argmax(self.logits(F), axis=1)


@dataclass
class GlobalClassifier:
    """Linear classifier over every global class; row ``i`` scores ``class_ids[i]``."""

    W: np.ndarray
    b: Optional[np.ndarray] = None
    class_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if self.class_ids is None:
            self.class_ids = np.arange(self.W.shape[0])
        self.class_ids = np.asarray(self.class_ids, dtype=int)
        if len(self.class_ids) != self.W.shape[0]:
            raise ConfigError("class_ids must match the number of rows of W")
        if len(np.unique(self.class_ids)) != len(self.class_ids):
            raise ConfigError("class_ids must be distinct")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=float)

    @property
    def C(self) -> int:
        return self.W.shape[0]

    def logits(self, F: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(F) @ self.W.T
        return out if self.b is None else out + self.b

    def rows_for(self, classes) -> np.ndarray:
        index = {int(c): i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([index[int(c)] for c in classes], dtype=int)
        except KeyError as exc:
            raise MissingClassError(f"class {exc.args[0]} not covered by the classifier") from None


def ridge_solve(X: np.ndarray, Y: np.ndarray, lam: float, add_bias: bool = True):
    """Minimise ``mean_i ||B^T z_i - y_i||^2 + lam * ||W||_F^2`` in closed form.

    ``z_i`` is ``x_i`` with a trailing 1 when ``add_bias``; the bias row is not
    penalised. Returns ``(W, b)`` with ``W`` shaped ``(targets, p)``.
    """
    X = np.atleast_2d(X)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    N, p = X.shape
    Z = np.hstack([X, np.ones((N, 1))]) if add_bias else X
    penalty = np.full(Z.shape[1], lam)
    if add_bias:
        penalty[-1] = 0.0
    A = Z.T @ Z / N + np.diag(penalty)
    B = np.linalg.solve(A, Z.T @ Y / N)
    if add_bias:
        return B[:p].T, B[p]
    return B.T, None


def ridge_objective_grad(X, Y, W, b, lam):
    """Gradient of the ridge objective with respect to ``(W, b)``."""
    X = np.atleast_2d(X)
    R = X @ W.T - Y if b is None else X @ W.T + b - Y
    N = len(X)
    gW = 2.0 * R.T @ X / N + 2.0 * lam * W
    gb = None if b is None else 2.0 * R.sum(axis=0) / N
    return gW, gb


def ridge_fit(features: np.ndarray, labels: np.ndarray, cfg: RidgeConfig = RidgeConfig(),
              k: Optional[int] = None) -> TaskClassifier:
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1 if k is None else k
    if len(np.unique(labels)) != k:
        raise ConfigError("ridge_fit needs at least one sample per class")
    W, b = ridge_solve(features, cfg.targets(labels, k), cfg.lam, cfg.add_bias)
    return TaskClassifier(W=W, b=b, provenance="ridge")


def gls_select(g: GlobalClassifier, task_classes: Sequence[int]) -> TaskClassifier:
    """Rows of ``g`` for ``task_classes``, in local-label order."""
    task_classes = np.asarray(task_classes, dtype=int)
    if len(np.unique(task_classes)) != len(task_classes):
        raise ConfigError("task classes must be distinct")
    rows = g.rows_for(task_classes)
    b = None if g.b is None else g.b[rows].copy()
    return TaskClassifier(W=g.W[rows].copy(), b=b, provenance="gls-selected")


def ce_loss(logits, y: int, active=None) -> float:
    """Cross-entropy of ``y`` with the softmax restricted to ``active``."""
    logits = np.asarray(logits, dtype=float)
    active = np.arange(len(logits)) if active is None else np.asarray(sorted(set(active)), dtype=int)
    if y not in set(active.tolist()):
        raise ConfigError(f"label {y} is not among the active classes")
    z = logits[active]
    zmax = z.max()
    return float(zmax + np.log(np.exp(z - zmax).sum()) - logits[y])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy for a batch of logits."""
    return -log_softmax(logits)[np.arange(len(y)), y]


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch gradient descent settings."""

    steps: int = 2000
    lr: float = 0.5
    tol: float = 1e-6
    fit_bias: bool = True
    seed: int = 0


@dataclass
class PretrainResult:
    classifier: GlobalClassifier
    embedding: object
    loss: float
    trace: list
    train_accuracy: float = float("nan")


def softmax_train(ds, embedding=None, reg: float = 1e-4, opt: TrainConfig = TrainConfig(),
                  joint: bool = False) -> PretrainResult:
    """Multi-class logistic regression on ``embedding(ds.features)``.

    Minimises ``mean CE + reg/2 * ||W||^2`` by full-batch gradient descent from
    ``W = 0``. With ``joint=True`` the linear embedding's ``theta`` is updated
    too (same penalty); the caller's embedding is left untouched.
    """
    if not ds.has_labels:
        raise MissingLabelError("softmax_train needs labelled data")
    class_ids, y = np.unique(ds.labels, return_inverse=True)
    C = len(class_ids)
    if C < 2:
        raise DegenerateDataError("softmax_train needs at least two classes")
    X = ds.features
    N = len(X)
    theta = None
    if joint:
        if embedding is None or not hasattr(embedding, "theta"):
            raise ConfigError("joint training needs a linear embedding")
        theta = embedding.theta.copy()
        F = X @ theta.T
    else:
        F = X if embedding is None else embedding(X)
    W = np.zeros((C, F.shape[1]))
    b = np.zeros(C)
    Y = np.zeros((N, C))
    Y[np.arange(N), y] = 1.0
    trace = []
    for step in range(opt.steps):
        logits = F @ W.T + b
        lsm = log_softmax(logits)
        loss = -lsm[np.arange(N), y].mean() + 0.5 * reg * (W ** 2).sum()
        G = (np.exp(lsm) - Y) / N
        gW = G.T @ F + reg * W
        gb = G.sum(axis=0) if opt.fit_bias else np.zeros(C)
        sq = (gW ** 2).sum() + (gb ** 2).sum()
        if joint:
            loss += 0.5 * reg * (theta ** 2).sum()
            gtheta = (G @ W).T @ X + reg * theta
            sq += (gtheta ** 2).sum()
        trace.append(float(loss))
        if not np.isfinite(loss):
            raise DegenerateDataError(f"softmax_train diverged at step {step}; lower the learning rate")
        if np.sqrt(sq) < opt.tol:
            break
        W -= opt.lr * gW
        b -= opt.lr * gb
        if joint:
            theta -= opt.lr * gtheta
            F = X @ theta.T
    logits = F @ W.T + b
    ce = float(cross_entropy(logits, y).mean())
    out_embedding = embedding
    if joint:
        out_embedding = type(embedding)(theta=theta, seed=getattr(embedding, "seed", None))
    clf = GlobalClassifier(W=W, b=b if opt.fit_bias else None, class_ids=class_ids)
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return PretrainResult(classifier=clf, embedding=out_embedding, loss=ce, trace=trace, train_accuracy=acc)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings. ``logistic_C`` is the inverse regularisation
    strength (sklearn convention)."""

    normalize: bool = True
    ridge: RidgeConfig = RidgeConfig()
    logistic_C: float = 1.0


Builder = Union[str, GlobalClassifier, TaskClassifier]


def _l2_normalize_rows(F: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    return F / np.where(norms > 0, norms, 1.0)


def build_task_classifier(task, Fs: np.ndarray, builder: Builder, cfg: EvalConfig) -> TaskClassifier:
    k = task.k
    if isinstance(builder, TaskClassifier):
        return builder
    if isinstance(builder, GlobalClassifier):
        if task.local_to_global is None:
            raise ConfigError("the GLS builder needs the task's global classes")
        return gls_select(builder, task.local_to_global)
    if builder == "ridge":
        return ridge_fit(Fs, task.support_y, cfg.ridge, k=k)
    if builder == "logistic":
        from sklearn.linear_model import LogisticRegression

        model = LogisticRegression(C=cfg.logistic_C, max_iter=2000)
        model.fit(Fs, task.support_y)
        W = np.zeros((k, Fs.shape[1]))
        b = np.zeros(k)
        if k == 2:
            # sklearn stores a single row for binary problems
            W[1], b[1] = model.coef_[0], model.intercept_[0]
        else:
            W[model.classes_], b[model.classes_] = model.coef_, model.intercept_
        return TaskClassifier(W=W, b=b, provenance="logistic")
    raise ConfigError(f"unknown builder {builder!r}")


def evaluate_task(task, embedding, builder: Builder = "ridge", cfg: EvalConfig = EvalConfig()) -> float:
    """Query accuracy of a classifier fitted (or selected) on the support set."""
    embed = (lambda X: X) if embedding is None else embedding
    Fs, Fq = embed(task.support_x), embed(task.query_x)
    if cfg.normalize:
        Fs, Fq = _l2_normalize_rows(Fs), _l2_normalize_rows(Fq)
    clf = build_task_classifier(task, Fs, builder, cfg)
    return float(np.mean(clf.predict(Fq) == task.query_y))
