"""Embedding models and meta-training through the closed-form ridge learner.

The few-shot loss of a task is the query mean squared error of a ridge
classifier fitted on the embedded support set. Its gradient is obtained by
differentiating the normal-equations solve directly, so no autodiff
framework is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError
from .learners import RidgeConfig


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DegenerateDataError("cannot normalise the zero vector")
    return v / norm


class LinearEmbedding:
    """``x -> theta @ x`` with ``theta`` of shape ``(p, d)``."""

    param_names = ("theta",)

    def __init__(self, theta, seed=None):
        theta = np.array(theta, dtype=float)
        if theta.ndim != 2 or not np.all(np.isfinite(theta)):
            raise ConfigError("theta must be a finite (p, d) matrix")
        self.theta = theta
        self.seed = seed

    @classmethod
    def random(cls, d: int, p: int, seed: int = 0) -> "LinearEmbedding":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((p, d)) / np.sqrt(d), seed=seed)

    @classmethod
    def identity(cls, d: int) -> "LinearEmbedding":
        return cls(np.eye(d))

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    def params(self) -> dict:
        return {"theta": self.theta}

    def with_params(self, params: dict) -> "LinearEmbedding":
        return LinearEmbedding(params["theta"], seed=self.seed)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ConfigError(f"expected inputs of dimension {self.d}, got {X.shape[-1]}")
        return X

    def __call__(self, X) -> np.ndarray:
        X = self._check(X)
        return X @ self.theta.T

    embed = __call__

    def backward(self, X, dF) -> dict:
        return {"theta": dF.T @ np.atleast_2d(X)}


class ResidualEmbedding:
    """Frozen base embedding plus a two-layer tanh adapter.

    ``g(x) = f + W2 @ tanh(W1 @ f + b1) + b2`` where ``f = base(x)``.
    """

    adapter_names = ("W1", "b1", "W2", "b2")

    def __init__(self, base: LinearEmbedding, W1, b1, W2, b2):
        self.base = base
        self.W1 = np.array(W1, dtype=float)
        self.b1 = np.array(b1, dtype=float)
        self.W2 = np.array(W2, dtype=float)
        self.b2 = np.array(b2, dtype=float)
        p = base.p
        hidden = self.W1.shape[0]
        if (self.W1.shape != (hidden, p) or self.b1.shape != (hidden,)
                or self.W2.shape != (p, hidden) or self.b2.shape != (p,)):
            raise ConfigError("adapter shapes are inconsistent with the base feature size")

    @classmethod
    def zero_init(cls, base: LinearEmbedding, hidden: Optional[int] = None, seed: int = 0):
        """Adapter whose output layer is zero, so the composed model equals ``base``."""
        p = base.p
        hidden = p if hidden is None else hidden
        rng = np.random.default_rng(seed)
        return cls(base, rng.standard_normal((hidden, p)) / np.sqrt(p), np.zeros(hidden),
                   np.zeros((p, hidden)), np.zeros(p))

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def p(self) -> int:
        return self.base.p

    @property
    def param_names(self):
        return ("theta",) + self.adapter_names

    def params(self) -> dict:
        return {"theta": self.base.theta, "W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_params(self, params: dict) -> "ResidualEmbedding":
        base = self.base if params["theta"] is self.base.theta else self.base.with_params(params)
        return ResidualEmbedding(base, params["W1"], params["b1"], params["W2"], params["b2"])

    def _forward(self, X):
        f = self.base(X)
        a = np.tanh(f @ self.W1.T + self.b1)
        return f, a, f + a @ self.W2.T + self.b2

    def __call__(self, X) -> np.ndarray:
        return self._forward(X)[2]

    embed = __call__

    def backward(self, X, dF) -> dict:
        X = np.atleast_2d(X)
        f, a, _ = self._forward(X)
        du = (dF @ self.W2) * (1.0 - a ** 2)
        df = dF + du @ self.W1
        return {
            "theta": df.T @ X,
            "W1": du.T @ f,
            "b1": du.sum(axis=0),
            "W2": dF.T @ a,
            "b2": dF.sum(axis=0),
        }


def _ridge_loss_and_feature_grads(Fs, ys, Fq, yq, k, cfg: RidgeConfig):
    """Query MSE of the support ridge fit, and its gradients w.r.t. both feature sets."""
    Ns, Nq = len(Fs), len(Fq)
    if cfg.add_bias:
        Zs = np.hstack([Fs, np.ones((Ns, 1))])
        Zq = np.hstack([Fq, np.ones((Nq, 1))])
    else:
        Zs, Zq = Fs, Fq
    Ys, Yq = cfg.targets(ys, k), cfg.targets(yq, k)
    penalty = np.full(Zs.shape[1], cfg.lam)
    if cfg.add_bias:
        penalty[-1] = 0.0
    A = Zs.T @ Zs / Ns + np.diag(penalty)
    B = np.linalg.solve(A, Zs.T @ Ys / Ns)
    R = Zq @ B - Yq
    loss = float((R ** 2).sum() / Nq)
    GB = 2.0 * Zq.T @ R / Nq
    Gamma = np.linalg.solve(A, GB)
    dZq = 2.0 * R @ B.T / Nq
    dZs = (Ys @ Gamma.T - Zs @ (B @ Gamma.T + Gamma @ B.T)) / Ns
    if cfg.add_bias:
        dZs, dZq = dZs[:, :-1], dZq[:, :-1]
    return loss, dZs, dZq


def meta_loss(model, task, cfg: RidgeConfig = RidgeConfig()) -> float:
    """Few-shot loss: ridge on the embedded support, MSE on the embedded query."""
    Fs, Fq = model(task.support_x), model(task.query_x)
    return _ridge_loss_and_feature_grads(Fs, task.support_y, Fq, task.query_y, task.k, cfg)[0]


def meta_loss_and_grad(model, task, cfg: RidgeConfig = RidgeConfig()):
    Fs, Fq = model(task.support_x), model(task.query_x)
    loss, dFs, dFq = _ridge_loss_and_feature_grads(Fs, task.support_y, Fq, task.query_y, task.k, cfg)
    gs = model.backward(task.support_x, dFs)
    gq = model.backward(task.query_x, dFq)
    return loss, {name: gs[name] + gq[name] for name in gs}


def meta_grad(model, task, cfg: RidgeConfig = RidgeConfig()) -> dict:
    """Exact gradient of :func:`meta_loss` for every parameter of ``model``."""
    return meta_loss_and_grad(model, task, cfg)[1]


def mean_meta_loss(model, tasks, cfg: RidgeConfig = RidgeConfig()) -> float:
    return float(np.mean([meta_loss(model, t, cfg) for t in tasks]))


@dataclass(frozen=True)
class MetaTrainConfig:
    learning_rate: float = 0.01
    steps: int = 1000
    ridge: RidgeConfig = RidgeConfig()
    eval_every: int = 0
    seed: int = 0
    clip: Optional[float] = 10.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")


@dataclass
class MetaTrainResult:
    model: object
    trace: list = field(default_factory=list)
    eval_trace: list = field(default_factory=list)


def _descend(model, tasks: Sequence, cfg: MetaTrainConfig, trainable) -> MetaTrainResult:
    if len(tasks) == 0:
        raise ConfigError("meta-training needs at least one task")
    order = np.random.default_rng(cfg.seed).permutation(len(tasks))
    params = {name: value.copy() for name, value in model.params().items()}
    result = MetaTrainResult(model=model)
    for step in range(cfg.steps):
        current = model.with_params(params)
        task = tasks[order[step % len(tasks)]]
        loss, grads = meta_loss_and_grad(current, task, cfg.ridge)
        result.trace.append(loss)
        update = {name: grads[name] for name in trainable}
        if cfg.clip is not None:
            norm = np.sqrt(sum((g ** 2).sum() for g in update.values()))
            if norm > cfg.clip:
                update = {name: g * (cfg.clip / norm) for name, g in update.items()}
        for name, g in update.items():
            params[name] = params[name] - cfg.learning_rate * g
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            result.eval_trace.append(mean_meta_loss(model.with_params(params), tasks, cfg.ridge))
    result.model = model.with_params(params) if cfg.steps else model
    return result


def meta_train_sim(tasks, d: int, p: int, cfg: MetaTrainConfig = MetaTrainConfig()) -> MetaTrainResult:
    """Learn a linear embedding by single-task gradient steps on the few-shot loss.

    Tasks are visited cyclically in a seeded order. ``theta`` starts from
    i.i.d. ``N(0, 1/d)`` entries.
    """
    model = LinearEmbedding.random(d, p, seed=cfg.seed)
    return _descend(model, tasks, cfg, trainable=("theta",))


def meta_finetune_residual(g_pre: LinearEmbedding, tasks, cfg: MetaTrainConfig = MetaTrainConfig(),
                           hidden: Optional[int] = None) -> MetaTrainResult:
    """Train a zero-initialised residual adapter on top of a frozen ``g_pre``."""
    model = ResidualEmbedding.zero_init(g_pre, hidden=hidden, seed=cfg.seed)
    return _descend(model, tasks, cfg, trainable=ResidualEmbedding.adapter_names)
