import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mela.errors import ConfigError, DegenerateDataError
from mela.label_inference import (
    ClusterState,
    InferenceConfig,
    LabelAssignment,
    UnionFind,
    class_level_pairs,
    class_mean,
    clustering_accuracy,
    infer_domains,
    kmeans_baseline,
    label_dataset,
    learn_labeler,
    match_class,
    prune_threshold,
    update_centroid,
)
from mela.taskgen import Task, make_meta_distribution, sample_meta_training_set


def _task(x, y, k, globals_=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    return Task(support_x=x, support_y=y, query_x=x[:0], query_y=y[:0],
                local_to_global=None if globals_ is None else np.asarray(globals_))


def test_class_mean_uses_support_and_query():
    md = make_meta_distribution(C=6, d=3, k=3, n=2, m=9, seed=0)
    t = sample_meta_training_set(md, 1, rng=0)[0]
    X = np.vstack([t.support_x, t.query_x])
    y = np.concatenate([t.support_y, t.query_y])
    np.testing.assert_allclose(class_mean(t, 1), X[y == 1].mean(0))


def test_match_class_nearest_and_ties():
    state = ClusterState.from_centroids([[0.0], [2.0], [4.0]])
    assert match_class([3.9], state) == 2
    assert match_class([1.0], state) == 0  # equidistant to 0 and 1


def test_update_centroid_running_mean():
    state = ClusterState(centroids=[[0.0]], sample_counts=[2.0], match_counts=[0])
    update_centroid(state, 0, [[3.0], [3.0]])
    assert state.centroids[0, 0] == pytest.approx(1.5)
    assert state.sample_counts[0] == 4
    assert state.match_counts[0] == 1


def test_prune_threshold_oracle():
    # mean 10, sd sqrt(100 * 0.1 * 0.9) = 3
    assert prune_threshold(100, 10, 3) == pytest.approx(1.0)
    assert prune_threshold(100, 10, 0) == pytest.approx(10.0)
    with pytest.raises(ConfigError):
        prune_threshold(10, 0, 1)


def test_inference_config_validation():
    with pytest.raises(ConfigError):
        InferenceConfig(q=-1)
    with pytest.raises(ConfigError):
        InferenceConfig(prune_mode="other")


def test_collision_task_is_discarded():
    # both local classes sit next to centroid 0, so the task cannot map to
    # two distinct clusters
    state = ClusterState.from_centroids([[0.0], [10.0]])
    t = _task([[0.1], [0.2]], [0, 1], 2)
    res = learn_labeler([t], cfg=InferenceConfig(V_init=2, q=0, max_sweeps=1), state=state)
    assert res.assignment.maps == [None]
    assert res.sweeps == 0


def test_learn_labeler_recovers_planted_classes(planted_tasks):
    md, tasks = planted_tasks
    res = learn_labeler(tasks, cfg=InferenceConfig(V_init=60, q=3.0, seed=0))
    assert res.state.V == md.C
    assert res.assignment.fraction_clustered >= 0.95
    assert clustering_accuracy(*class_level_pairs(tasks, res.assignment)) >= 0.99
    assert res.V_history[0] == 60 and res.V_history[-1] == md.C


def test_learn_labeler_is_deterministic(planted_tasks):
    _, tasks = planted_tasks
    a = learn_labeler(tasks[:80], cfg=InferenceConfig(V_init=30, seed=4))
    b = learn_labeler(tasks[:80], cfg=InferenceConfig(V_init=30, seed=4))
    assert a.state.centroids.tobytes() == b.state.centroids.tobytes()
    assert a.sweeps == b.sweeps


def test_resume_from_state_reproduces_assignment(planted_tasks):
    _, tasks = planted_tasks
    first = learn_labeler(tasks, cfg=InferenceConfig(seed=1))
    state = ClusterState(first.state.centroids.copy(), first.state.sample_counts.copy(),
                         first.state.match_counts.copy())
    again = learn_labeler(tasks, cfg=InferenceConfig(seed=1), state=state)
    for a, b in zip(first.assignment.maps, again.assignment.maps):
        assert (a is None and b is None) or np.array_equal(a, b)


def test_assignments_are_injective_per_task(planted_tasks):
    _, tasks = planted_tasks
    res = learn_labeler(tasks, cfg=InferenceConfig(seed=2))
    for m in res.assignment.maps:
        if m is not None:
            assert len(set(m.tolist())) == len(m)
            assert max(m) < res.state.V


def test_tasks_prune_mode_runs(planted_tasks):
    _, tasks = planted_tasks
    res = learn_labeler(tasks, cfg=InferenceConfig(prune_mode="tasks", seed=0))
    assert 5 <= res.state.V <= 60


def test_learn_labeler_input_checks():
    with pytest.raises(ConfigError):
        learn_labeler([])
    md = make_meta_distribution(C=6, d=3, k=5, n=1, m=5, seed=0)
    tasks = sample_meta_training_set(md, 3, rng=0)
    with pytest.raises(ConfigError):
        learn_labeler(tasks, cfg=InferenceConfig(V_init=4))
    with pytest.raises(ConfigError):
        learn_labeler(tasks, cfg=InferenceConfig(V_init=60))


def test_label_dataset_requires_retained_tasks():
    t = _task([[0.0], [1.0]], [0, 1], 2)
    with pytest.raises(DegenerateDataError):
        label_dataset([t], LabelAssignment(maps=[None], V=2))


def test_label_dataset_dense_labels():
    t = _task([[0.0], [1.0]], [0, 1], 2)
    ds = label_dataset([t, t], LabelAssignment(maps=[np.array([7, 3]), None], V=8))
    assert ds.labels.tolist() == [1, 0]


# --- K-means baseline ---------------------------------------------------------


def test_kmeans_two_blobs():
    X = np.vstack([np.zeros((10, 2)), np.full((10, 2), 5.0)])
    assign, centroids, trace = kmeans_baseline(X, 2, seed=0)
    assert len(set(assign[:10])) == 1 and len(set(assign[10:])) == 1
    assert assign[0] != assign[-1]
    assert trace[-1] == pytest.approx(0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_kmeans_objective_non_increasing(seed):
    X = np.random.default_rng(seed).standard_normal((60, 3))
    _, _, trace = kmeans_baseline(X, 4, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_kmeans_K_too_large():
    with pytest.raises(ConfigError):
        kmeans_baseline(np.zeros((3, 2)), 4)


# --- clustering accuracy ------------------------------------------------------


def test_clustering_accuracy_oracles():
    assert clustering_accuracy([0, 0, 1, 1], [5, 5, 6, 6]) == 1.0
    assert clustering_accuracy([0, 0, 0, 0], [5, 5, 6, 6]) == 0.5
    assert clustering_accuracy([1, 1, 1, 2], [3, 3, 4, 4]) == 0.75
    with pytest.raises(DegenerateDataError):
        clustering_accuracy([], [])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_clustering_accuracy_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 5, 40)
    assigned = rng.integers(0, 4, 40)
    relabel = rng.permutation(10)
    assert clustering_accuracy(assigned, truth) == clustering_accuracy(relabel[assigned], truth)


# --- domains ------------------------------------------------------------------


def test_union_find_groups():
    uf = UnionFind(range(6))
    uf.union(4, 1)
    uf.union(1, 2)
    uf.union(5, 3)
    assert uf.groups() == [[0], [1, 2, 4], [3, 5]]


def test_infer_domains_oracle():
    maps = [np.array([0, 1]), np.array([1, 2]), None, np.array([3, 4])]
    assert infer_domains([None] * 4, LabelAssignment(maps=maps, V=5)) == [[0, 1, 2], [3, 4]]


def test_infer_domains_planted():
    # ten classes per domain: a domain holding exactly k classes collapses as
    # soon as one of its clusters is pruned, since all its tasks then collide
    md = make_meta_distribution(C=30, d=32, k=5, n=5, m=15, separation=6.0, n_domains=3, seed=0)
    tasks = sample_meta_training_set(md, 100, rng=0)
    res = learn_labeler(tasks, cfg=InferenceConfig(V_init=60, seed=0))
    comps = infer_domains(tasks, res.assignment)
    assert len(comps) == 3
    clusters, truth = class_level_pairs(tasks, res.assignment)
    for comp in comps:
        domains = {int(md.domain_of_class[g]) for c, g in zip(clusters, truth) if c in comp}
        assert len(domains) == 1


def test_ceil_initialisation_count():
    md = make_meta_distribution(C=10, d=8, k=4, n=2, m=4, separation=6.0, seed=0)
    tasks = sample_meta_training_set(md, 30, rng=0)
    res = learn_labeler(tasks, cfg=InferenceConfig(V_init=10, q=0.0, max_sweeps=1))
    assert res.V_history[0] == 10
