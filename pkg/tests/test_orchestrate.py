import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthrm.orchestrate import (
    SensingGraph,
    build_sensing_graph,
    detect_communities,
    louvain,
    modularity,
    visibility_iou,
)
from synthrm.render import CameraModel, ViewBuffers, render_view, sample_trajectory


class _View:
    def __init__(self, ids):
        self.ids = np.asarray(ids)

    def visible_triangles(self):
        return self.ids


def _same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return all((a[i] == a[j]) == (b[i] == b[j]) for i, j in itertools.combinations(range(len(a)), 2))


def test_iou_examples():
    assert visibility_iou(range(1, 101), range(51, 151)) == pytest.approx(1 / 3, abs=1e-9)
    assert visibility_iou([1, 2], [1, 2]) == 1.0
    assert visibility_iou([], []) == 0.0


def test_graph_from_visibility_sets():
    views = [(None, _View(range(1, 101))), (None, _View(range(51, 151))), (None, _View(range(1000, 1010)))]
    g = build_sensing_graph(views)
    assert len(g.edges) == 1
    i, j, w = g.edges[0]
    assert (i, j) == (0, 1) and w == pytest.approx(0.3333, abs=1e-4)


def test_identical_and_disjoint_poses(downtown):
    c = sample_trajectory(downtown, "OrbitUAV", 1, 0, 32, 32)[0]
    b = render_view(downtown, c)
    assert build_sensing_graph([(c, b), (c, b)], downtown).edges[0][2] == 1.0
    lo, hi = downtown.bounds
    out_a = CameraModel.look_at([lo[0], lo[1], 20], [lo[0] - 10, lo[1] - 10, 20], 32, 32)
    out_b = CameraModel.look_at([hi[0], hi[1], 20], [hi[0] + 10, hi[1] + 10, 20], 32, 32)
    g = build_sensing_graph([(out_a, render_view(downtown, out_a)), (out_b, render_view(downtown, out_b))])
    assert g.edges == []


def test_two_cliques():
    A = np.zeros((10, 10))
    A[:5, :5] = 1
    A[5:, 5:] = 1
    np.fill_diagonal(A, 0)
    labels = louvain(A)
    assert list(labels) == [0] * 5 + [1] * 5


def test_single_node():
    g = SensingGraph([("p", None)], [])
    assert list(detect_communities(g)) == [0]
    assert g.communities is not None


def planted(seed=0):
    rng = np.random.default_rng(seed)
    n = 20
    truth = np.repeat([0, 1], 10)
    A = np.where(truth[:, None] == truth[None], 0.9, 0.05) * rng.uniform(0.9, 1.1, (n, n))
    A = np.triu(A, 1)
    return A + A.T, truth


def test_planted_partition_is_brute_force_optimum():
    A, truth = planted()
    labels = louvain(A)
    assert _same_partition(labels, truth)
    # exhaustive check over all bipartitions with node 0 fixed
    best = -1.0
    for mask in range(1 << 19):
        lab = np.array([0] + [(mask >> k) & 1 for k in range(19)])
        best = max(best, modularity(A, lab))
    assert modularity(A, labels) == pytest.approx(best, abs=1e-12)


def test_modularity_known_value():
    # two disjoint edges split correctly: Q = 1/2
    A = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], float)
    assert modularity(A, [0, 0, 1, 1]) == pytest.approx(0.5)
    assert modularity(A, [0, 0, 0, 0]) == pytest.approx(0.0)


def test_resolution_validation():
    with pytest.raises(ValueError):
        louvain(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        louvain(np.array([[0, 1], [0, 0]], float))


def _random_graph(data):
    n = data.draw(st.integers(2, 12))
    # distinct weights: exact structural ties are the one case where numbering matters
    w = data.draw(st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n, unique=True))
    A = np.triu(np.array(w).reshape(n, n), 1)
    A[A < 0.4] = 0
    return A + A.T


@settings(max_examples=60)
@given(st.data())
def test_properties(data):
    A = _random_graph(data)
    n = len(A)
    labels = louvain(A)
    assert modularity(A, labels) >= modularity(A, np.arange(n)) - 1e-12
    # members of one community are connected through positive edges inside it
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        seen, stack = {idx[0]}, [idx[0]]
        while stack:
            u = stack.pop()
            for v in idx:
                if A[u, v] > 0 and v not in seen:
                    seen.add(v)
                    stack.append(v)
        assert len(seen) == len(idx)
    perm = np.array(data.draw(st.permutations(range(n))))
    relabeled = louvain(A[np.ix_(perm, perm)])
    back = np.empty(n, dtype=np.int64)
    back[perm] = relabeled
    assert _same_partition(back, labels)


def test_graph_json(tmp_path):
    views = [(None, _View([1, 2, 3])), (None, _View([2, 3, 4]))]
    g = build_sensing_graph(views, pose_ids=["a", "b"])
    detect_communities(g)
    g.write(tmp_path / "g.json")
    import json
    d = json.loads((tmp_path / "g.json").read_text())
    assert d["nodes"] == [{"index": 0, "pose_id": "a"}, {"index": 1, "pose_id": "b"}]
    assert d["edges"][0]["weight"] == pytest.approx(0.5) and d["communities"] == [0, 0]
