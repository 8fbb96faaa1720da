"""CSV readers and writers for tasks, datasets, models and cluster state.

Floats are written with ``repr`` so every value round-trips exactly.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ParseError
from .label_inference import ClusterState, LabelAssignment
from .learners import GlobalClassifier
from .representation import LinearEmbedding, ResidualEmbedding
from .taskgen import FlatDataset, Task


def _fmt(x) -> str:
    return repr(float(x))


def _feature_header(prefix, d):
    return [f"{prefix}{i}" for i in range(d)]


def _floats(values, line):
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", line) from None


def _int(value, what, line):
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"bad {what} {value!r}", line) from None


# --- episodic tasks -------------------------------------------------------------

def save_tasks(path, tasks) -> None:
    d = tasks[0].d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "sample_id", "role", "local_label", "global_label"] + _feature_header("f", d))
        for t in tasks:
            for role, X, y, ids in (("support", t.support_x, t.support_y, t.support_ids),
                                    ("query", t.query_x, t.query_y, t.query_ids)):
                for x, lab, sid in zip(X, y, ids):
                    glob = "" if t.local_to_global is None else str(int(t.local_to_global[lab]))
                    w.writerow([t.task_id, int(sid), role, int(lab), glob] + [_fmt(v) for v in x])


def load_tasks(path) -> list:
    """Read an episodic CSV. Errors name the offending (1-based) line."""
    records = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if header[:5] != ["task_id", "sample_id", "role", "local_label", "global_label"]:
            raise ParseError("unexpected header", 1)
        d = len(header) - 5
        if d < 1:
            raise ParseError("no feature columns", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"feature dimension mismatch: expected {d} features, got {len(row) - 5}", line)
            tid = _int(row[0], "task_id", line)
            sid = _int(row[1], "sample_id", line)
            role = row[2]
            if role not in ("support", "query"):
                raise ParseError(f"role must be support or query, got {role!r}", line)
            local = _int(row[3], "local_label", line)
            glob = None if row[4] == "" else _int(row[4], "global_label", line)
            feats = _floats(row[5:], line)
            if tid not in records:
                records[tid] = []
                order.append(tid)
            records[tid].append((line, sid, role, local, glob, feats))
    return [_build_task(tid, records[tid]) for tid in order]


def _build_task(tid, rows):
    first_line = rows[0][0]
    support = [r for r in rows if r[2] == "support"]
    query = [r for r in rows if r[2] == "query"]
    if not support:
        raise ParseError(f"task {tid} has no support records", first_line)
    labels = sorted({r[3] for r in support})
    if labels != list(range(len(labels))):
        raise ParseError(f"task {tid}: local labels {labels} are not a dense 0..k-1 range", first_line)
    k = len(labels)
    for r in query:
        if not 0 <= r[3] < k:
            raise ParseError(f"task {tid}: query label {r[3]} outside 0..{k - 1}", r[0])
    mapping = {}
    for r in rows:
        if r[4] is None:
            continue
        if mapping.setdefault(r[3], r[4]) != r[4]:
            raise ParseError(f"task {tid}: local label {r[3]} has conflicting global labels", r[0])
    l2g = np.array([mapping[j] for j in range(k)]) if len(mapping) == k else None
    return Task(
        support_x=np.array([r[5] for r in support]),
        support_y=np.array([r[3] for r in support]),
        query_x=np.array([r[5] for r in query]).reshape(len(query), -1),
        query_y=np.array([r[3] for r in query], dtype=int),
        local_to_global=l2g,
        task_id=tid,
        support_ids=np.array([r[1] for r in support]),
        query_ids=np.array([r[1] for r in query], dtype=int),
    )


# --- flat and grid datasets -----------------------------------------------------

def save_flat(path, ds: FlatDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "global_label"] + _feature_header("f", ds.d))
        labels = ds.labels if ds.labels is not None else np.full(len(ds), -1)
        for sid, lab, x in zip(ds.ids, labels, ds.features):
            w.writerow([int(sid), "" if lab < 0 else int(lab)] + [_fmt(v) for v in x])


def load_flat(path) -> FlatDataset:
    ids, labels, feats = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError("feature dimension mismatch", line)
            ids.append(_int(row[0], "sample_id", line))
            labels.append(-1 if row[1] == "" else _int(row[1], "global_label", line))
            feats.append(_floats(row[2:], line))
    return FlatDataset(features=np.array(feats), labels=np.array(labels), ids=np.array(ids))


def save_grid(path, ds: FlatDataset) -> None:
    h, w_ = ds.grid_shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "global_label", "h", "w"] + [f"g{i}{j}" for i in range(h) for j in range(w_)])
        for sid, lab, x in zip(ds.ids, ds.labels, ds.features):
            w.writerow([int(sid), int(lab), h, w_] + [_fmt(v) for v in x])


def load_grid(path) -> FlatDataset:
    ids, labels, feats, shape = [], [], [], None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line, row in enumerate(reader, start=2):
            h, w = _int(row[2], "h", line), _int(row[3], "w", line)
            if shape is None:
                shape = (h, w)
            if (h, w) != shape or len(row) != 4 + h * w:
                raise ParseError("grid shape mismatch", line)
            ids.append(_int(row[0], "sample_id", line))
            labels.append(_int(row[1], "global_label", line))
            feats.append(_floats(row[4:], line))
    return FlatDataset(features=np.array(feats), labels=np.array(labels), ids=np.array(ids), grid_shape=shape)


# --- models ---------------------------------------------------------------------

def save_classifier(path, clf: GlobalClassifier) -> None:
    p = clf.W.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id"] + _feature_header("w", p) + ([] if clf.b is None else ["bias"]))
        for i, cid in enumerate(clf.class_ids):
            tail = [] if clf.b is None else [_fmt(clf.b[i])]
            w.writerow([int(cid)] + [_fmt(v) for v in clf.W[i]] + tail)


def load_classifier(path) -> GlobalClassifier:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_bias = header[-1] == "bias"
        rows = [(line, row) for line, row in enumerate(reader, start=2)]
    ids = [_int(r[0], "class_id", ln) for ln, r in rows]
    vals = np.array([_floats(r[1:], ln) for ln, r in rows])
    if has_bias:
        return GlobalClassifier(W=vals[:, :-1], b=vals[:, -1], class_ids=ids)
    return GlobalClassifier(W=vals, class_ids=ids)


def _write_block(w, name, M):
    M = np.atleast_2d(M)
    w.writerow(["matrix", name, M.shape[0], M.shape[1]])
    for row in M:
        w.writerow([_fmt(v) for v in row])


def save_embedding(path, model) -> None:
    """One block per parameter: a ``matrix,<name>,<rows>,<cols>`` line then the rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(model, ResidualEmbedding):
            w.writerow(["model", "residual"])
            _write_block(w, "theta", model.base.theta)
            for name in ResidualEmbedding.adapter_names:
                _write_block(w, name, getattr(model, name))
        else:
            w.writerow(["model", "linear"])
            _write_block(w, "theta", model.theta)


def load_embedding(path):
    blocks = {}
    with open(path, newline="") as fh:
        rows = list(enumerate(csv.reader(fh), start=1))
    if not rows or rows[0][1][:1] != ["model"]:
        raise ParseError("missing model line", 1)
    kind = rows[0][1][1]
    i = 1
    while i < len(rows):
        line, row = rows[i]
        if row[:1] != ["matrix"] or len(row) != 4:
            raise ParseError("expected a matrix header", line)
        name, r, c = row[1], _int(row[2], "rows", line), _int(row[3], "cols", line)
        body = rows[i + 1: i + 1 + r]
        if len(body) != r or any(len(b) != c for _, b in body):
            raise ParseError(f"block {name} does not match its {r}x{c} shape", line)
        blocks[name] = np.array([_floats(b, ln) for ln, b in body])
        i += 1 + r
    base = LinearEmbedding(blocks["theta"])
    if kind == "linear":
        return base
    return ResidualEmbedding(base, blocks["W1"], blocks["b1"][0], blocks["W2"], blocks["b2"][0])


# --- cluster state and assignments -----------------------------------------------

def save_clusters(path, state: ClusterState) -> None:
    p = state.centroids.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "sample_count"] + _feature_header("c", p))
        for v in range(state.V):
            w.writerow([v, _fmt(state.sample_counts[v])] + [_fmt(x) for x in state.centroids[v]])


def load_clusters(path) -> ClusterState:
    counts, cents = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError("centroid dimension mismatch", line)
            counts.append(_floats(row[1:2], line)[0])
            cents.append(_floats(row[2:], line))
    V = len(cents)
    return ClusterState(np.array(cents).reshape(V, len(header) - 2), np.array(counts), np.zeros(V, dtype=int))


def save_assignment(path, tasks, assignment: LabelAssignment) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "local_label", "cluster_id"])
        for t, m in zip(tasks, assignment.maps):
            for j in range(t.k):
                w.writerow([t.task_id, j, -1 if m is None else int(m[j])])


def load_assignment(path, tasks) -> LabelAssignment:
    per_task = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line, row in enumerate(reader, start=2):
            tid, j, v = (_int(x, "field", line) for x in row)
            per_task.setdefault(tid, {})[j] = v
    maps, V = [], 0
    for t in tasks:
        entries = per_task.get(t.task_id)
        if entries is None:
            raise ParseError(f"task {t.task_id} missing from assignment file")
        m = np.array([entries[j] for j in range(t.k)])
        if np.any(m < 0):
            maps.append(None)
        else:
            maps.append(m)
            V = max(V, int(m.max()) + 1)
    return LabelAssignment(maps=maps, V=V)


def write_rows_csv(path, rows: list) -> None:
    """Write a list of flat dicts (shared keys) as CSV."""
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
