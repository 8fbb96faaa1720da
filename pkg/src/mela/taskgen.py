"""Synthetic meta-distributions, episodic tasks and flat datasets.

Tasks follow the usual few-shot protocol: pick ``k`` classes, draw ``n``
support points per class from a class-conditional Gaussian, then draw ``m``
query points with labels uniform over the chosen classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, MissingLabelError


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass(frozen=True)
class MetaDistribution:
    """Generative description of a task distribution.

    ``class_means`` has shape ``(C, d)``; the class conditional is
    ``N(class_means[y], noise_std**2 * I)``. When ``domain_of_class`` is set,
    every task draws its classes from a single domain.
    """

    class_means: np.ndarray
    noise_std: float
    k: int
    n: int
    m: int
    domain_of_class: Optional[np.ndarray] = None
    seed: int = 0
    grid_shape: Optional[tuple] = None

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=float)
        object.__setattr__(self, "class_means", means)
        if means.ndim != 2:
            raise ConfigError("class_means must be a (C, d) matrix")
        C = means.shape[0]
        if not (C >= self.k >= 2):
            raise ConfigError(f"need C >= k >= 2, got C={C}, k={self.k}")
        if self.n < 1 or self.m < 1:
            raise ConfigError("n and m must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if len(np.unique(means, axis=0)) != C:
            raise ConfigError("class means must be pairwise distinct")
        if self.domain_of_class is not None:
            dom = np.asarray(self.domain_of_class, dtype=int)
            if dom.shape != (C,):
                raise ConfigError("domain_of_class must have one entry per class")
            if np.bincount(dom).max() < self.k:
                raise ConfigError("no domain holds k classes")
            object.__setattr__(self, "domain_of_class", dom)
        if self.grid_shape is not None:
            h, w = self.grid_shape
            if h * w != means.shape[1]:
                raise ConfigError("grid_shape does not match feature dimension")

    @property
    def C(self) -> int:
        return self.class_means.shape[0]

    @property
    def d(self) -> int:
        return self.class_means.shape[1]

    @property
    def task_size(self) -> int:
        return self.n * self.k + self.m

    def subset(self, classes: Sequence[int]) -> "MetaDistribution":
        """Restrict to ``classes`` (renumbered 0..len-1 in the given order)."""
        classes = np.asarray(classes, dtype=int)
        dom = None if self.domain_of_class is None else self.domain_of_class[classes]
        return replace(self, class_means=self.class_means[classes], domain_of_class=dom)


def make_meta_distribution(
    C: int,
    d: int,
    k: int = 5,
    n: int = 1,
    m: int = 15,
    noise_std: float = 1.0,
    separation: Optional[float] = None,
    n_domains: Optional[int] = None,
    domain_offset: Optional[float] = None,
    grid_shape: Optional[tuple] = None,
    seed: int = 0,
) -> MetaDistribution:
    """Random unit class means scaled by ``separation`` (default 4 * noise_std).

    With ``n_domains`` the classes are split into contiguous blocks and each
    block is shifted by its own random offset of norm ``domain_offset``
    (default ``3 * separation``), so domains form distinct regions.
    """
    if separation is None:
        separation = 4.0 * noise_std
    if separation <= 0:
        raise ConfigError("separation must be positive (pass it explicitly when noise_std=0)")
    if grid_shape is not None:
        d = int(np.prod(grid_shape))
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((C, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = separation * dirs
    domain_of_class = None
    if n_domains is not None:
        domain_of_class = np.arange(C) * n_domains // C
        offset = 3.0 * separation if domain_offset is None else domain_offset
        shifts = rng.standard_normal((n_domains, d))
        shifts *= offset / np.linalg.norm(shifts, axis=1, keepdims=True)
        means = means + shifts[domain_of_class]
    return MetaDistribution(
        class_means=means,
        noise_std=float(noise_std),
        k=k,
        n=n,
        m=m,
        domain_of_class=domain_of_class,
        seed=seed,
        grid_shape=None if grid_shape is None else tuple(grid_shape),
    )


@dataclass
class Task:
    """One episode. Local labels are ``0..k-1``; ``local_to_global`` is hidden
    ground truth used only for scoring (and by the GLS builder)."""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    local_to_global: Optional[np.ndarray] = None
    task_id: int = 0
    support_ids: Optional[np.ndarray] = None
    query_ids: Optional[np.ndarray] = None
    domain_id: Optional[int] = None

    def __post_init__(self):
        self.support_x = np.atleast_2d(np.asarray(self.support_x, dtype=float))
        self.query_x = np.asarray(self.query_x, dtype=float).reshape(-1, self.support_x.shape[1])
        self.support_y = np.asarray(self.support_y, dtype=int)
        self.query_y = np.asarray(self.query_y, dtype=int)
        if self.local_to_global is not None:
            self.local_to_global = np.asarray(self.local_to_global, dtype=int)
        if self.support_ids is None:
            self.support_ids = np.arange(len(self.support_y))
        if self.query_ids is None:
            self.query_ids = np.arange(len(self.support_y), len(self.support_y) + len(self.query_y))
        self.support_ids = np.asarray(self.support_ids, dtype=int)
        self.query_ids = np.asarray(self.query_ids, dtype=int)

    @property
    def k(self) -> int:
        return int(self.support_y.max()) + 1

    @property
    def d(self) -> int:
        return self.support_x.shape[1]

    def __len__(self):
        return len(self.support_y) + len(self.query_y)

    @property
    def x(self) -> np.ndarray:
        """Support then query features."""
        return np.vstack([self.support_x, self.query_x])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.support_y, self.query_y])

    @property
    def ids(self) -> np.ndarray:
        return np.concatenate([self.support_ids, self.query_ids])

    def global_labels(self, which="all") -> np.ndarray:
        if self.local_to_global is None:
            raise MissingLabelError(f"task {self.task_id} has no ground-truth global labels")
        y = {"all": self.y, "support": self.support_y, "query": self.query_y}[which]
        return self.local_to_global[y]


def _draw(md: MetaDistribution, labels: np.ndarray, rng) -> np.ndarray:
    noise = rng.standard_normal((len(labels), md.d)) * md.noise_std
    return md.class_means[labels] + noise


def sample_task(md: MetaDistribution, rng, task_id: int = 0) -> Task:
    rng = as_rng(rng)
    domain = None
    if md.domain_of_class is None:
        pool = np.arange(md.C)
    else:
        sizes = np.bincount(md.domain_of_class)
        domain = int(rng.choice(np.flatnonzero(sizes >= md.k)))
        pool = np.flatnonzero(md.domain_of_class == domain)
    # rng.choice returns a uniformly random ordering, which doubles as the
    # random local-label permutation.
    classes = rng.choice(pool, size=md.k, replace=False)
    support_y = np.repeat(np.arange(md.k), md.n)
    query_y = rng.integers(0, md.k, size=md.m)
    support_x = _draw(md, classes[support_y], rng)
    query_x = _draw(md, classes[query_y], rng)
    size = md.task_size
    ids = np.arange(task_id * size, (task_id + 1) * size)
    return Task(
        support_x=support_x,
        support_y=support_y,
        query_x=query_x,
        query_y=query_y,
        local_to_global=classes,
        task_id=task_id,
        support_ids=ids[: len(support_y)],
        query_ids=ids[len(support_y):],
        domain_id=domain,
    )


def sample_meta_training_set(md: MetaDistribution, T: int, rng=None) -> list[Task]:
    if T < 1:
        raise ConfigError("T must be >= 1")
    rng = as_rng(md.seed if rng is None else rng)
    return [sample_task(md, rng, task_id=t) for t in range(T)]


@dataclass
class FlatDataset:
    """Flat labelled dataset stored column-wise.

    ``labels`` uses ``-1`` for unknown. ``grid_shape`` is set when every row of
    ``features`` is a flattened ``(h, w)`` grid.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    grid_shape: Optional[tuple] = None
    augmented: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        N = len(self.features)
        if self.ids is None:
            self.ids = np.arange(N)
        self.ids = np.asarray(self.ids, dtype=int)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (N,):
                raise ConfigError("labels must have one entry per sample")
        if self.ids.shape != (N,):
            raise ConfigError("ids must have one entry per sample")

    def __len__(self):
        return len(self.features)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None and bool(np.all(self.labels >= 0))

    @property
    def C_effective(self) -> int:
        if self.labels is None:
            return 0
        return len(np.unique(self.labels[self.labels >= 0]))

    def relabeled(self) -> "FlatDataset":
        """Map labels onto the dense range 0..C_effective-1 (sorted order)."""
        if not self.has_labels:
            raise MissingLabelError("dataset lacks global labels")
        _, dense = np.unique(self.labels, return_inverse=True)
        return replace(self, labels=dense.astype(int))

    def deduplicated(self) -> "FlatDataset":
        _, first = np.unique(self.ids, return_index=True)
        keep = np.sort(first)
        labels = None if self.labels is None else self.labels[keep]
        return replace(self, features=self.features[keep], labels=labels, ids=self.ids[keep])


def flatten(tasks: Sequence[Task], labels: Optional[Sequence[np.ndarray]] = None,
            dedup: bool = False) -> FlatDataset:
    """Concatenate support-then-query records of every task.

    ``labels`` optionally gives, per task, a length-k map from local labels to
    global ones; otherwise the tasks' ``local_to_global`` is used when every
    task has one, and labels are left unknown otherwise.
    """
    if len(tasks) == 0:
        raise ConfigError("flatten needs at least one task")
    feats = np.vstack([t.x for t in tasks])
    ids = np.concatenate([t.ids for t in tasks])
    if labels is None and all(t.local_to_global is not None for t in tasks):
        labels = [t.local_to_global for t in tasks]
    if labels is None:
        y = None
    else:
        y = np.concatenate([np.asarray(lab, dtype=int)[t.y] for t, lab in zip(tasks, labels)])
    ds = FlatDataset(features=feats, labels=y, ids=ids)
    return ds.deduplicated() if dedup else ds


def sample_flat_dataset(md: MetaDistribution, per_class, rng=None) -> FlatDataset:
    """Draw ``per_class`` samples of every class (an int or a length-C sequence)."""
    rng = as_rng(md.seed if rng is None else rng)
    counts = np.broadcast_to(np.asarray(per_class, dtype=int), (md.C,))
    labels = np.repeat(np.arange(md.C), counts)
    return FlatDataset(features=_draw(md, labels, rng), labels=labels, grid_shape=md.grid_shape)


def gfsl_partition(ds: FlatDataset, k: int, n: int, m: int, rng=None) -> list[Task]:
    """Split a labelled dataset into disjoint tasks without replacement.

    Each round shuffles the classes that still hold at least ``n + 1``
    samples and takes the first ``k``. If those cannot supply ``n*k + m``
    samples, the ``k`` largest pools are used instead; when even they are
    short, partitioning stops. Query points are drawn uniformly from the
    chosen classes' remaining pools, so exhausted classes drop out and any
    imbalance in ``ds`` carries over to the tasks.
    """
    if not ds.has_labels:
        raise MissingLabelError("gfsl_partition requires global labels on every sample")
    rng = as_rng(rng)
    classes = np.unique(ds.labels)
    pools = {int(c): list(rng.permutation(np.flatnonzero(ds.labels == c))) for c in classes}
    need = n * k + m
    tasks = []
    while True:
        eligible = [c for c in pools if len(pools[c]) >= n + 1]
        if len(eligible) < k:
            break
        order = [eligible[i] for i in rng.permutation(len(eligible))]
        chosen = order[:k]
        if sum(len(pools[c]) for c in chosen) < need:
            chosen = sorted(order, key=lambda c: -len(pools[c]))[:k]
            if sum(len(pools[c]) for c in chosen) < need:
                break
        support_rows = []
        for c in chosen:
            support_rows.extend(pools[c][:n])
            del pools[c][:n]
        remaining = [(c, r) for c in chosen for r in pools[c]]
        pick = rng.choice(len(remaining), size=m, replace=False)
        taken = {}
        query_rows = []
        for i in pick:
            c, r = remaining[i]
            query_rows.append(r)
            taken.setdefault(c, set()).add(r)
        for c, rows in taken.items():
            pools[c] = [r for r in pools[c] if r not in rows]
        local = {c: j for j, c in enumerate(chosen)}
        support_rows = np.asarray(support_rows)
        query_rows = np.asarray(query_rows)
        tasks.append(
            Task(
                support_x=ds.features[support_rows],
                support_y=np.repeat(np.arange(k), n),
                query_x=ds.features[query_rows],
                query_y=np.array([local[int(c)] for c in ds.labels[query_rows]]),
                local_to_global=np.asarray(chosen),
                task_id=len(tasks),
                support_ids=ds.ids[support_rows],
                query_ids=ds.ids[query_rows],
            )
        )
    return tasks
