"""Monte-Carlo risk estimates, the GLS-vs-pretraining bound, rate study, meta-test.

The GLS risk scores each query point with a softmax over the task's own
classes only; the pre-training risk uses all ``C`` classes. Both are computed
from the same draws, which makes the per-sample comparison exact.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .learners import EvalConfig, GlobalClassifier, TrainConfig, evaluate_task, softmax_train
from .representation import LinearEmbedding
from .taskgen import MetaDistribution, as_rng, flatten, sample_meta_training_set, sample_task


@dataclass
class RiskEstimate:
    value: float
    std_error: float
    num_draws: int

    @classmethod
    def from_draws(cls, values) -> "RiskEstimate":
        values = np.asarray(values, dtype=float)
        n = len(values)
        se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(value=float(values.mean()), std_error=se, num_draws=n)

    def to_dict(self) -> dict:
        return asdict(self)


def _lse(z: np.ndarray) -> np.ndarray:
    if z.shape[1] == 0:
        return np.full(len(z), -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)))[:, 0]


def paired_losses(W: GlobalClassifier, task, embedding=None):
    """Per-query-sample (GLS loss, full cross-entropy) for one task.

    The full log-partition is assembled as ``logaddexp(active, rest)``, so the
    full loss can never round below the subset loss.
    """
    F = task.query_x if embedding is None else embedding(task.query_x)
    logits = W.logits(F)
    rows = W.rows_for(task.local_to_global)
    rest = np.setdiff1d(np.arange(W.C), rows)
    target = logits[np.arange(len(F)), rows[task.query_y]]
    lse_active = _lse(logits[:, rows])
    lse_all = np.logaddexp(lse_active, _lse(logits[:, rest]))
    return lse_active - target, lse_all - target


def _draw_losses(md, W, embedding, draws, rng):
    rng = as_rng(rng)
    gls, pre, violations = [], [], 0
    for i in range(draws):
        task = sample_task(md, rng, task_id=i)
        g, p = paired_losses(W, task, embedding)
        violations += int(np.sum(g > p))
        gls.append(g.mean())
        pre.append(p.mean())
    return np.array(gls), np.array(pre), violations


def estimate_gls_risk(md: MetaDistribution, W: GlobalClassifier, embedding=None, draws: int = 1000,
                      rng=0) -> RiskEstimate:
    return RiskEstimate.from_draws(_draw_losses(md, W, embedding, draws, rng)[0])


def estimate_pretrain_risk(md: MetaDistribution, W: GlobalClassifier, embedding=None, draws: int = 1000,
                           rng=0) -> RiskEstimate:
    """Full ``C``-way cross-entropy under the flattened task distribution."""
    return RiskEstimate.from_draws(_draw_losses(md, W, embedding, draws, rng)[1])


def verify_theorem1(md, W, embedding=None, draws: int = 10000, rng=0) -> dict:
    gls_draws, pre_draws, violations = _draw_losses(md, W, embedding, draws, rng)
    gls = RiskEstimate.from_draws(gls_draws)
    pre = RiskEstimate.from_draws(pre_draws)
    slack = 3.0 * math.hypot(gls.std_error, pre.std_error)
    paired_violations = int(np.sum(gls_draws > pre_draws))
    return {
        "gls": gls.to_dict(),
        "pretrain": pre.to_dict(),
        "holds": bool(gls.value <= pre.value + slack) and violations == 0,
        "pointwise_violations": violations,
        "paired_draw_violations": paired_violations,
    }


# --- rate study ---------------------------------------------------------------

def meta_gls_train(tasks, C: int, embedding: LinearEmbedding, reg: float = 1e-4,
                   opt: TrainConfig = TrainConfig(), seed: int = 0):
    """Jointly fit ``(W, theta)`` on the empirical meta-GLS objective.

    One task per step, visited cyclically in a seeded order; each step uses
    the query loss of the task's selected rows of ``W``.
    """
    theta = embedding.theta.copy()
    W = np.zeros((C, theta.shape[0]))
    b = np.zeros(C)
    order = np.random.default_rng(seed).permutation(len(tasks))
    for step in range(opt.steps):
        task = tasks[order[step % len(tasks)]]
        rows = task.local_to_global
        X = task.query_x
        F = X @ theta.T
        z = F @ W[rows].T + b[rows]
        z -= z.max(axis=1, keepdims=True)
        P = np.exp(z)
        P /= P.sum(axis=1, keepdims=True)
        P[np.arange(len(X)), task.query_y] -= 1.0
        G = P / len(X)
        gW = reg * W
        gW[rows] += G.T @ F
        gb = np.zeros(C)
        gb[rows] = G.sum(axis=0)
        gtheta = (G @ W[rows]).T @ X + reg * theta
        W -= opt.lr * gW
        b -= opt.lr * gb
        theta -= opt.lr * gtheta
    return GlobalClassifier(W=W, b=b), LinearEmbedding(theta, seed=embedding.seed)


@dataclass
class RateStudyRow:
    T: int
    N: int
    gls_risk: RiskEstimate
    pretrain_risk: RiskEstimate
    seeds_averaged: int

    def to_dict(self) -> dict:
        return {"T": self.T, "N": self.N, "gls_risk": self.gls_risk.to_dict(),
                "pretrain_risk": self.pretrain_risk.to_dict(), "seeds_averaged": self.seeds_averaged}


@dataclass(frozen=True)
class RateStudyConfig:
    p: Optional[int] = None
    reg: float = 1e-3
    train: TrainConfig = TrainConfig(steps=500, lr=0.1)
    eval_draws: int = 200


def _seed_average(estimates: Sequence[RiskEstimate]) -> RiskEstimate:
    values = np.array([e.value for e in estimates])
    return RiskEstimate.from_draws(values)


def rate_study(md: MetaDistribution, T_grid: Sequence[int], seeds: int = 20,
               cfg: RateStudyConfig = RateStudyConfig()) -> list:
    """Meta-GLS vs pre-training as the number of training tasks grows.

    ``gls_risk`` is the meta-GLS model and ``pretrain_risk`` the pre-trained
    model, both scored by the GLS risk on fresh tasks. The reported standard
    error is across seeds.
    """
    T_grid = list(T_grid)
    if any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise ConfigError("T_grid must be strictly increasing")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    p = md.d if cfg.p is None else cfg.p
    rows = []
    for T in T_grid:
        meta, pre = [], []
        for s in range(seeds):
            tasks = sample_meta_training_set(md, T, rng=np.random.default_rng([md.seed, T, s]))
            init = LinearEmbedding.random(md.d, p, seed=s)
            W_meta, g_meta = meta_gls_train(tasks, md.C, init, cfg.reg, cfg.train, seed=s)
            res = softmax_train(flatten(tasks), init, cfg.reg, cfg.train, joint=True)
            W_pre = expand_classifier(res.classifier, md.C)
            eval_seed = 10_000 + s
            meta.append(estimate_gls_risk(md, W_meta, g_meta, cfg.eval_draws, eval_seed))
            pre.append(estimate_gls_risk(md, W_pre, res.embedding, cfg.eval_draws, eval_seed))
        rows.append(RateStudyRow(T=T, N=T * md.task_size, gls_risk=_seed_average(meta),
                                 pretrain_risk=_seed_average(pre), seeds_averaged=seeds))
    return rows


def expand_classifier(clf: GlobalClassifier, C: int) -> GlobalClassifier:
    """Pad a classifier to cover classes ``0..C-1``; unseen classes get zero rows."""
    W = np.zeros((C, clf.W.shape[1]))
    b = np.zeros(C)
    W[clf.class_ids] = clf.W
    if clf.b is not None:
        b[clf.class_ids] = clf.b
    return GlobalClassifier(W=W, b=b)


# --- meta-test ------------------------------------------------------------------

@dataclass
class MetaTestReport:
    mean: float
    ci95: float
    accuracies: list = field(default_factory=list)

    def to_dict(self, per_task: bool = False) -> dict:
        out = {"mean_accuracy": self.mean, "ci95": self.ci95, "num_tasks": len(self.accuracies)}
        if per_task:
            out["accuracies"] = list(self.accuracies)
        return out


def meta_test(tasks, embedding, builder="ridge", cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> MetaTestReport:
    """Mean query accuracy over ``tasks`` with a ``1.96 * sd / sqrt(T)`` interval."""
    if len(tasks) < 2:
        raise ConfigError("meta_test needs at least two tasks for an interval")
    run = lambda t: evaluate_task(t, embedding, builder, cfg)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            accs = list(pool.map(run, tasks))
    else:
        accs = [run(t) for t in tasks]
    accs = np.asarray(accs)
    ci = 1.96 * accs.std(ddof=1) / math.sqrt(len(accs))
    return MetaTestReport(mean=float(accs.mean()), ci95=float(ci), accuracies=accs.tolist())
