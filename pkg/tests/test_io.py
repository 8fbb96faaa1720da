import numpy as np
import pytest

from mela import io
from mela.errors import ParseError
from mela.label_inference import ClusterState, InferenceConfig, learn_labeler
from mela.learners import GlobalClassifier
from mela.representation import LinearEmbedding, ResidualEmbedding
from mela.taskgen import make_meta_distribution, sample_flat_dataset, sample_meta_training_set


@pytest.fixture
def tasks():
    md = make_meta_distribution(C=8, d=3, k=3, n=2, m=4, seed=0)
    return sample_meta_training_set(md, 4, rng=0)


def test_tasks_round_trip_exact(tmp_path, tasks):
    path = tmp_path / "tasks.csv"
    io.save_tasks(path, tasks)
    back = io.load_tasks(path)
    assert len(back) == 4
    for a, b in zip(tasks, back):
        assert a.support_x.tobytes() == b.support_x.tobytes()
        assert a.query_x.tobytes() == b.query_x.tobytes()
        np.testing.assert_array_equal(a.support_y, b.support_y)
        np.testing.assert_array_equal(a.query_y, b.query_y)
        np.testing.assert_array_equal(a.local_to_global, b.local_to_global)
        np.testing.assert_array_equal(a.ids, b.ids)


def _corrupt(tmp_path, tasks, line_no, edit):
    path = tmp_path / "tasks.csv"
    io.save_tasks(path, tasks)
    lines = path.read_text().splitlines()
    lines[line_no - 1] = edit(lines[line_no - 1])
    path.write_text("\n".join(lines) + "\n")
    return path


def test_dimension_mismatch_names_line(tmp_path, tasks):
    path = _corrupt(tmp_path, tasks, 4, lambda s: s.rsplit(",", 1)[0])
    with pytest.raises(ParseError) as exc:
        io.load_tasks(path)
    assert exc.value.line == 4
    assert "line 4" in str(exc.value)


def test_bad_role_and_number(tmp_path, tasks):
    path = _corrupt(tmp_path, tasks, 3, lambda s: s.replace("support", "train"))
    with pytest.raises(ParseError, match="line 3"):
        io.load_tasks(path)
    path = _corrupt(tmp_path, tasks, 5, lambda s: s.rsplit(",", 1)[0] + ",abc")
    with pytest.raises(ParseError, match="line 5"):
        io.load_tasks(path)


def test_header_checked(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(ParseError, match="line 1"):
        io.load_tasks(path)


def test_tasks_without_global_labels(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "task_id,sample_id,role,local_label,global_label,f0\n"
        "0,0,support,0,,1.0\n0,1,support,1,,2.0\n0,2,query,1,,2.5\n"
    )
    (t,) = io.load_tasks(path)
    assert t.local_to_global is None
    assert t.k == 2


def test_conflicting_global_labels(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "task_id,sample_id,role,local_label,global_label,f0\n"
        "0,0,support,0,4,1.0\n0,1,support,1,5,2.0\n0,2,query,1,6,2.5\n"
    )
    with pytest.raises(ParseError, match="line 4"):
        io.load_tasks(path)


def test_flat_and_grid_round_trip(tmp_path):
    md = make_meta_distribution(C=4, d=9, k=2, grid_shape=(3, 3), seed=0)
    ds = sample_flat_dataset(md, 5, rng=0)
    io.save_flat(tmp_path / "f.csv", ds)
    back = io.load_flat(tmp_path / "f.csv")
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    io.save_grid(tmp_path / "g.csv", ds)
    grid = io.load_grid(tmp_path / "g.csv")
    assert grid.grid_shape == (3, 3)
    assert grid.features.tobytes() == ds.features.tobytes()


@pytest.mark.parametrize("with_bias", [True, False])
def test_classifier_round_trip(tmp_path, with_bias):
    rng = np.random.default_rng(0)
    clf = GlobalClassifier(W=rng.standard_normal((4, 3)), b=rng.standard_normal(4) if with_bias else None,
                           class_ids=np.array([2, 5, 7, 9]))
    io.save_classifier(tmp_path / "c.csv", clf)
    back = io.load_classifier(tmp_path / "c.csv")
    assert back.W.tobytes() == clf.W.tobytes()
    np.testing.assert_array_equal(back.class_ids, clf.class_ids)
    assert (back.b is None) == (not with_bias)


def test_embedding_round_trip(tmp_path):
    lin = LinearEmbedding.random(5, 3, seed=1)
    io.save_embedding(tmp_path / "e.csv", lin)
    assert io.load_embedding(tmp_path / "e.csv").theta.tobytes() == lin.theta.tobytes()
    rng = np.random.default_rng(0)
    res = ResidualEmbedding(lin, rng.standard_normal((2, 3)), rng.standard_normal(2),
                            rng.standard_normal((3, 2)), rng.standard_normal(3))
    io.save_embedding(tmp_path / "r.csv", res)
    back = io.load_embedding(tmp_path / "r.csv")
    X = rng.standard_normal((4, 5))
    assert back(X).tobytes() == res(X).tobytes()


def test_embedding_truncated_block(tmp_path):
    path = tmp_path / "e.csv"
    io.save_embedding(path, LinearEmbedding.random(4, 3))
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(ParseError, match="line 2"):
        io.load_embedding(path)


def test_clusters_and_assignment_round_trip(tmp_path, tasks):
    res = learn_labeler(tasks, cfg=InferenceConfig(V_init=6, q=0.0, max_sweeps=2))
    io.save_clusters(tmp_path / "c.csv", res.state)
    state = io.load_clusters(tmp_path / "c.csv")
    assert isinstance(state, ClusterState)
    assert state.centroids.tobytes() == res.state.centroids.tobytes()
    io.save_assignment(tmp_path / "a.csv", tasks, res.assignment)
    back = io.load_assignment(tmp_path / "a.csv", tasks)
    for a, b in zip(res.assignment.maps, back.maps):
        assert (a is None and b is None) or np.array_equal(a, b)


def test_assignment_missing_task(tmp_path, tasks):
    path = tmp_path / "a.csv"
    path.write_text("task_id,local_label,cluster_id\n")
    with pytest.raises(ParseError):
        io.load_assignment(path, tasks)


def test_write_rows_csv(tmp_path):
    io.write_rows_csv(tmp_path / "r.csv", [{"a": 1, "b": 0.1}, {"a": 2, "b": 1 / 3}])
    assert (tmp_path / "r.csv").read_text() == "a,b\n1,0.1\n2,0.3333333333333333\n"
