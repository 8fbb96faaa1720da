"""Global label inference by task-constrained clustering.

Every local class of a task is matched, as a whole, to its nearest centroid
(all its samples share one cluster). A task whose ``k`` classes do not land
on ``k`` distinct centroids is skipped, so two local classes of one task never
share a cluster. After each sweep, rarely matched centroids are pruned.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError
from .taskgen import FlatDataset, flatten

log = logging.getLogger(__name__)

DISCARDED = None


@dataclass
class ClusterState:
    centroids: np.ndarray
    sample_counts: np.ndarray
    match_counts: np.ndarray

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        V = len(self.centroids)
        self.sample_counts = np.asarray(self.sample_counts, dtype=float).reshape(V)
        self.match_counts = np.asarray(self.match_counts, dtype=int).reshape(V)

    @classmethod
    def from_centroids(cls, centroids) -> "ClusterState":
        centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
        V = len(centroids)
        return cls(centroids.copy(), np.ones(V), np.zeros(V, dtype=int))

    @property
    def V(self) -> int:
        return len(self.centroids)

    def reset_counts(self):
        self.sample_counts[:] = 1.0
        self.match_counts[:] = 0

    def keep(self, mask) -> None:
        self.centroids = self.centroids[mask]
        self.sample_counts = self.sample_counts[mask]
        self.match_counts = self.match_counts[mask]


@dataclass(frozen=True)
class InferenceConfig:
    V_init: int = 60
    q: float = 3.0
    max_sweeps: int = 50
    seed: int = 0
    prune_mode: str = "matches"  # or "tasks": Binomial(T, 1/V)

    def __post_init__(self):
        if self.q < 0:
            raise ConfigError("q must be non-negative")
        if self.prune_mode not in ("matches", "tasks"):
            raise ConfigError(f"unknown prune_mode {self.prune_mode!r}")


@dataclass
class LabelAssignment:
    """Per task, a length-k array of cluster ids or ``None`` when discarded."""

    maps: list
    V: int

    @property
    def n_clustered(self) -> int:
        return sum(m is not None for m in self.maps)

    @property
    def n_discarded(self) -> int:
        return len(self.maps) - self.n_clustered

    @property
    def fraction_clustered(self) -> float:
        return self.n_clustered / len(self.maps) if self.maps else 0.0


@dataclass
class LabelerResult:
    state: ClusterState
    assignment: LabelAssignment
    sweeps: int
    V_history: list = field(default_factory=list)


def class_mean(task, local_label: int, embedding=None) -> np.ndarray:
    """Mean embedding of every support and query sample with ``local_label``."""
    X = task.x[task.y == local_label]
    F = X if embedding is None else embedding(X)
    return F.mean(axis=0)


def _task_class_stats(task, embedding):
    F = task.x if embedding is None else embedding(task.x)
    y = task.y
    k = task.k
    sums = np.zeros((k, F.shape[1]))
    np.add.at(sums, y, F)
    counts = np.bincount(y, minlength=k).astype(float)
    return sums / counts[:, None], sums, counts


def _sq_dists(means: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((means[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def match_class(mean, state: ClusterState) -> int:
    """Index of the nearest centroid (squared Euclidean); ties go to the lowest index."""
    if state.V == 0:
        raise DegenerateDataError("no centroids to match against")
    return int(np.argmin(_sq_dists(np.atleast_2d(mean), state.centroids)[0]))


def update_centroid(state: ClusterState, v: int, embedded) -> ClusterState:
    """Fold a class's embedded samples into centroid ``v`` as a running weighted mean."""
    embedded = np.atleast_2d(embedded)
    _fold(state, v, embedded.sum(axis=0), len(embedded))
    return state


def _fold(state, v, total, n):
    N = state.sample_counts[v]
    state.centroids[v] = (N * state.centroids[v] + total) / (N + n)
    state.sample_counts[v] = N + n
    state.match_counts[v] += 1


def prune_threshold(M: float, V: int, q: float) -> float:
    """``mean - q * sd`` of Binomial(M, 1/V)."""
    if V < 1:
        raise ConfigError("V must be >= 1")
    p = 1.0 / V
    return M * p - q * math.sqrt(M * p * (1.0 - p))


def _initial_centroids(stats, k, cfg, rng):
    n_tasks = math.ceil(cfg.V_init / k)
    if n_tasks > len(stats):
        raise ConfigError(f"need {n_tasks} tasks to initialise {cfg.V_init} clusters, have {len(stats)}")
    picks = rng.choice(len(stats), size=n_tasks, replace=False)
    return np.vstack([stats[i][0] for i in picks])[: cfg.V_init]


def assign_tasks(stats, state: ClusterState) -> list:
    maps = []
    for means, _, _ in stats:
        match = np.argmin(_sq_dists(means, state.centroids), axis=1)
        maps.append(match if len(np.unique(match)) == len(match) else DISCARDED)
    return maps


def learn_labeler(tasks: Sequence, embedding=None, cfg: InferenceConfig = InferenceConfig(),
                  state: Optional[ClusterState] = None) -> LabelerResult:
    """Infer global clusters from local labels.

    Passing ``state`` resumes from saved clusters: no sweeps are run and only
    the final assignment pass is performed.
    """
    if len(tasks) == 0:
        raise ConfigError("learn_labeler needs at least one task")
    k = max(t.k for t in tasks)
    if cfg.V_init < k:
        raise ConfigError(f"V_init ({cfg.V_init}) must be at least k ({k})")
    rng = np.random.default_rng(cfg.seed)
    stats = [_task_class_stats(t, embedding) for t in tasks]
    sweeps = 0
    history = []
    if state is None:
        state = ClusterState.from_centroids(_initial_centroids(stats, k, cfg, rng))
        order = rng.permutation(len(tasks))
        history.append(state.V)
        while sweeps < cfg.max_sweeps:
            before = state.V
            state.reset_counts()
            for i in order:
                means, sums, counts = stats[i]
                match = np.argmin(_sq_dists(means, state.centroids), axis=1)
                if len(np.unique(match)) != len(match):
                    continue
                for j, v in enumerate(match):
                    _fold(state, v, sums[j], counts[j])
            sweeps += 1
            M = len(tasks) if cfg.prune_mode == "tasks" else int(state.match_counts.sum())
            threshold = prune_threshold(M, state.V, cfg.q)
            state.keep(state.match_counts >= threshold)
            history.append(state.V)
            log.debug("sweep %d: V %d -> %d (threshold %.3f)", sweeps, before, state.V, threshold)
            if state.V == before:
                break
    log.info("labeler ran %d sweeps, %d clusters", sweeps, state.V)
    assignment = LabelAssignment(maps=assign_tasks(stats, state), V=state.V)
    return LabelerResult(state=state, assignment=assignment, sweeps=sweeps, V_history=history)


def kmeans_baseline(X: np.ndarray, K: int, iters: int = 100, seed: int = 0):
    """Lloyd's algorithm from ``K`` distinct random samples.

    Returns ``(assignments, centroids, objective_trace)``; the trace holds the
    within-cluster sum of squares after every assignment step.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if K > len(X):
        raise ConfigError("K cannot exceed the number of samples")
    rng = np.random.default_rng(seed)
    centroids = X[rng.choice(len(X), size=K, replace=False)].copy()
    trace = []
    assign = None
    for _ in range(iters):
        d2 = _sq_dists(X, centroids)
        new = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(X)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(K):
            members = X[assign == c]
            if len(members):  # empty clusters keep their centroid
                centroids[c] = members.mean(axis=0)
    return assign, centroids, trace


def clustering_accuracy(assigned, truth) -> float:
    """Fraction of items whose true label is their cluster's majority label.

    Majority ties resolve to the lowest label.
    """
    assigned = np.asarray(assigned, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if len(assigned) == 0:
        raise DegenerateDataError("clustering accuracy is undefined without assignments")
    correct = 0
    for c in np.unique(assigned):
        labels = truth[assigned == c]
        values, counts = np.unique(labels, return_counts=True)
        correct += counts.max()  # np.unique sorts, argmax picks the lowest label on ties
    return correct / len(assigned)


def class_level_pairs(tasks, assignment: LabelAssignment):
    """``(cluster, true global label)`` for every local class of retained tasks."""
    clusters, truth = [], []
    for task, m in zip(tasks, assignment.maps):
        if m is None:
            continue
        clusters.extend(m)
        truth.extend(task.local_to_global)
    return np.asarray(clusters, dtype=int), np.asarray(truth, dtype=int)


def label_dataset(tasks, assignment: LabelAssignment) -> FlatDataset:
    """Flatten retained tasks with their inferred cluster ids as dense labels."""
    kept = [(t, m) for t, m in zip(tasks, assignment.maps) if m is not None]
    if not kept:
        raise DegenerateDataError("every task was discarded; nothing to label")
    ds = flatten([t for t, _ in kept], labels=[m for _, m in kept])
    return ds.relabeled()


class UnionFind:
    def __init__(self, items=()):
        self.parent = {}
        for x in items:
            self.add(x)

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self) -> list:
        out = {}
        for x in sorted(self.parent):
            out.setdefault(self.find(x), []).append(x)
        return sorted(out.values(), key=lambda g: g[0])


def infer_domains(tasks, assignment: LabelAssignment) -> list:
    """Connected components of the cluster co-occurrence graph.

    Two clusters are linked when some retained task matched classes to both.
    Returns sorted lists of cluster ids.
    """
    uf = UnionFind()
    for m in assignment.maps:
        if m is None:
            continue
        ids = [int(v) for v in m]
        for v in ids:
            uf.add(v)
        for v in ids[1:]:
            uf.union(ids[0], v)
    return uf.groups()
