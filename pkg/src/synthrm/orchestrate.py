"""Sensing graph over camera poses and perception-community detection.

Edge weights are the IoU of the scene-triangle sets each view actually
rasterized. Communities come from a deterministic Louvain optimizer of
generalized (resolution-weighted) modularity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .render import CameraModel, ViewBuffers

MIN_EDGE_WEIGHT = 0.01


@dataclass
class SensingGraph:
    nodes: list  # (pose id, CameraModel)
    edges: list  # (i, j, weight) with i < j
    communities: np.ndarray | None = None
    visible: list = field(default_factory=list, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        A = np.zeros((n, n))
        for i, j, w in self.edges:
            A[i, j] = A[j, i] = w
        return A

    def to_dict(self) -> dict:
        out = {
            "nodes": [{"index": k, "pose_id": pid} for k, (pid, _) in enumerate(self.nodes)],
            "edges": [{"i": int(i), "j": int(j), "weight": float(w)} for i, j, w in self.edges],
        }
        if self.communities is not None:
            out["communities"] = [int(c) for c in self.communities]
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def visibility_iou(a, b) -> float:
    a = np.unique(np.asarray(a, dtype=np.int64))
    b = np.unique(np.asarray(b, dtype=np.int64))
    union = np.union1d(a, b).size
    if union == 0:
        return 0.0
    return np.intersect1d(a, b, assume_unique=True).size / union


def build_sensing_graph(views, scene=None, pose_ids=None, min_weight: float = MIN_EDGE_WEIGHT) -> SensingGraph:
    """``views`` is a sequence of ``(CameraModel, ViewBuffers)``.

    ``scene`` is accepted for interface symmetry; visibility comes from the
    rasterizer's triangle-id buffer, which already indexes the scene.
    """
    views = list(views)
    if not views:
        raise ValueError("at least one view is required")
    pose_ids = list(range(len(views))) if pose_ids is None else list(pose_ids)
    visible = [np.asarray(buf.visible_triangles(), dtype=np.int64) for _, buf in views]
    edges = []
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            w = visibility_iou(visible[i], visible[j])
            if w >= min_weight:
                edges.append((i, j, w))
    nodes = [(pid, cam) for pid, (cam, _) in zip(pose_ids, views)]
    return SensingGraph(nodes, edges, None, visible)


def modularity(A: np.ndarray, labels, resolution: float = 1.0) -> float:
    """Generalized modularity of a partition of a weighted symmetric graph."""
    A = np.asarray(A, dtype=np.float64)
    labels = np.asarray(labels)
    k = A.sum(axis=1)
    two_m = k.sum()
    if two_m == 0:
        return 0.0
    same = labels[:, None] == labels[None, :]
    return float(((A - resolution * np.outer(k, k) / two_m) * same).sum() / two_m)


def _one_level(A: np.ndarray, resolution: float) -> tuple[np.ndarray, bool]:
    n = len(A)
    comm = np.arange(n)
    k = A.sum(axis=1)
    two_m = k.sum()
    tot = k.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n):
            ci = comm[i]
            tot[ci] -= k[i]
            links = {}
            for j in np.nonzero(A[i])[0]:
                if j != i:
                    links[comm[j]] = links.get(comm[j], 0.0) + A[i, j]
            def gain(c):
                return links.get(c, 0.0) - resolution * tot[c] * k[i] / two_m
            # Move only on strict improvement; ascending scan keeps ties on the lower id.
            best, best_gain = ci, gain(ci)
            for c in sorted(links):
                if c == ci:
                    continue
                g = gain(c)
                if g > best_gain + 1e-12:
                    best, best_gain = c, g
            comm[i] = best
            tot[best] += k[i]
            if best != ci:
                improved = moved_any = True
    _, labels = np.unique(comm, return_inverse=True)
    return _first_seen_labels(labels), moved_any


def _first_seen_labels(labels) -> np.ndarray:
    mapping = {}
    return np.array([mapping.setdefault(int(c), len(mapping)) for c in labels], dtype=np.int64)


def _split_disconnected(A: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Split communities into connected components (never lowers modularity)."""
    out = -np.ones(len(labels), dtype=np.int64)
    nxt = 0
    for start in range(len(labels)):
        if out[start] >= 0:
            continue
        stack = [start]
        out[start] = nxt
        while stack:
            u = stack.pop()
            for v in np.nonzero(A[u])[0]:
                if out[v] < 0 and labels[v] == labels[start]:
                    out[v] = nxt
                    stack.append(v)
        nxt += 1
    return out


def canonical_order(A: np.ndarray) -> np.ndarray:
    """Node order that depends on weights only: strength, then the sorted
    neighbour-weight profile, both descending; exact ties fall back to node id."""
    n = len(A)
    profile = -np.sort(A, axis=1)
    keys = [profile[:, k] for k in range(n - 1, -1, -1)] + [-A.sum(axis=1)]
    return np.lexsort(keys)


def louvain(A: np.ndarray, resolution: float = 1.0) -> np.ndarray:
    """Deterministic Louvain.

    Nodes are visited in :func:`canonical_order` rank, and gain ties go to the
    lower community id in that ranking, so the partition does not depend on
    how the input nodes are numbered.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    A = np.asarray(A, dtype=np.float64)
    n = len(A)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.allclose(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if A.sum() == 0:
        return np.arange(n)
    order = canonical_order(A)
    membership = np.arange(n)
    cur = A[np.ix_(order, order)]
    while True:
        labels, moved = _one_level(cur, resolution)
        membership = labels[membership]
        if not moved:
            break
        m = labels.max() + 1
        P = np.zeros((len(labels), m))
        P[np.arange(len(labels)), labels] = 1.0
        cur = P.T @ cur @ P
    labels = np.empty(n, dtype=np.int64)
    labels[order] = membership
    return _first_seen_labels(_split_disconnected(A, labels))


def detect_communities(graph: SensingGraph, resolution: float = 1.0) -> np.ndarray:
    labels = louvain(graph.adjacency(), resolution)
    graph.communities = labels
    return labels
