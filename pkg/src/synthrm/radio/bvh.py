"""Bounding volume hierarchy over scene triangles with jitted segment queries.

Queries take a segment ``o + s * d`` for ``s`` in ``(smin, smax)`` and a short
list of plane ids to ignore (the planes the segment's endpoints lie on).
"""
from __future__ import annotations

import numpy as np
from numba import njit

LEAF_SIZE = 4
STACK_SIZE = 64
BARY_EPS = 1e-9


class BVH:
    """Median-split BVH; immutable after construction."""

    def __init__(self, vertices: np.ndarray, tri_plane: np.ndarray):
        tris = np.asarray(vertices, dtype=np.float64)
        self.num_triangles = len(tris)
        lo_nodes, hi_nodes, left, right, count, first = [], [], [], [], [], []
        order = np.arange(len(tris))
        cent = tris.mean(axis=1) if len(tris) else np.zeros((0, 3))
        tmin = tris.min(axis=1) if len(tris) else np.zeros((0, 3))
        tmax = tris.max(axis=1) if len(tris) else np.zeros((0, 3))

        def build(start, stop):
            idx = len(count)
            lo_nodes.append(None), hi_nodes.append(None)
            left.append(-1), right.append(-1), count.append(0), first.append(start)
            sel = order[start:stop]
            lo_nodes[idx] = tmin[sel].min(axis=0)
            hi_nodes[idx] = tmax[sel].max(axis=0)
            if stop - start <= LEAF_SIZE:
                count[idx] = stop - start
                return idx
            c = cent[sel]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            # Stable sort keeps the build deterministic across platforms.
            order[start:stop] = sel[np.argsort(c[:, axis], kind="stable")]
            mid = (start + stop) // 2
            left[idx] = build(start, mid)
            right[idx] = build(mid, stop)
            return idx

        if len(tris):
            build(0, len(tris))
            self.node_min = np.array(lo_nodes)
            self.node_max = np.array(hi_nodes)
        else:
            self.node_min = np.zeros((0, 3))
            self.node_max = np.zeros((0, 3))
        self.left = np.array(left, np.int64)
        self.right = np.array(right, np.int64)
        self.count = np.array(count, np.int64)
        self.first = np.array(first, np.int64)
        self.order = order.astype(np.int64)
        self.v0 = np.ascontiguousarray(tris[:, 0]) if len(tris) else np.zeros((0, 3))
        self.e1 = np.ascontiguousarray(tris[:, 1] - tris[:, 0]) if len(tris) else np.zeros((0, 3))
        self.e2 = np.ascontiguousarray(tris[:, 2] - tris[:, 0]) if len(tris) else np.zeros((0, 3))
        self.tri_plane = np.asarray(tri_plane, np.int64)

    def arrays(self) -> tuple:
        return (self.node_min, self.node_max, self.left, self.right, self.count, self.first,
                self.order, self.v0, self.e1, self.e2, self.tri_plane)


@njit(cache=True, inline="always")
def _ray_box(o, inv, lo, hi, smin, smax):
    t0 = smin
    t1 = smax
    for a in range(3):
        ta = (lo[a] - o[a]) * inv[a]
        tb = (hi[a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        # NaN from 0 * inf means the ray lies in the slab boundary: keep it.
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True, inline="always")
def _ray_tri(o, d, v0, e1, e2):
    """Moller-Trumbore; returns segment parameter or -1."""
    h0 = d[1] * e2[2] - d[2] * e2[1]
    h1 = d[2] * e2[0] - d[0] * e2[2]
    h2 = d[0] * e2[1] - d[1] * e2[0]
    a = e1[0] * h0 + e1[1] * h1 + e1[2] * h2
    if a == 0.0:
        return -1.0
    f = 1.0 / a
    s0 = o[0] - v0[0]
    s1 = o[1] - v0[1]
    s2 = o[2] - v0[2]
    u = f * (s0 * h0 + s1 * h1 + s2 * h2)
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return -1.0
    q0 = s1 * e1[2] - s2 * e1[1]
    q1 = s2 * e1[0] - s0 * e1[2]
    q2 = s0 * e1[1] - s1 * e1[0]
    v = f * (d[0] * q0 + d[1] * q1 + d[2] * q2)
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return -1.0
    return f * (e2[0] * q0 + e2[1] * q1 + e2[2] * q2)


@njit(cache=True, inline="always")
def _ignored(plane, ign):
    for k in range(ign.shape[0]):
        if ign[k] == plane:
            return True
    return False


@njit(cache=True)
def _inv(d):
    inv = np.empty(3)
    for a in range(3):
        inv[a] = 1.0 / d[a] if d[a] != 0.0 else np.inf
    return inv


@njit(cache=True)
def segment_blocked(o, d, smin, smax, ign, bvh):
    """True if any non-ignored triangle intersects the open segment."""
    node_min, node_max, left, right, count, first, order, v0, e1, e2, tri_plane = bvh
    if node_min.shape[0] == 0:
        return False
    inv = _inv(d)
    stack = np.empty(STACK_SIZE, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        if not _ray_box(o, inv, node_min[nd], node_max[nd], smin, smax):
            continue
        c = count[nd]
        if c > 0:
            for k in range(first[nd], first[nd] + c):
                tri = order[k]
                if _ignored(tri_plane[tri], ign):
                    continue
                s = _ray_tri(o, d, v0[tri], e1[tri], e2[tri])
                if s > smin and s < smax:
                    return True
        else:
            stack[sp] = left[nd]
            stack[sp + 1] = right[nd]
            sp += 2
    return False


@njit(cache=True)
def segment_hits(o, d, smin, smax, ign, bvh, out_s, out_tri):
    """All intersections with the open segment, sorted by parameter.

    Returns the hit count, or -1 if more than ``len(out_s)`` hits occur.
    """
    node_min, node_max, left, right, count, first, order, v0, e1, e2, tri_plane = bvh
    if node_min.shape[0] == 0:
        return 0
    inv = _inv(d)
    stack = np.empty(STACK_SIZE, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    nh = 0
    cap = out_s.shape[0]
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        if not _ray_box(o, inv, node_min[nd], node_max[nd], smin, smax):
            continue
        c = count[nd]
        if c > 0:
            for k in range(first[nd], first[nd] + c):
                tri = order[k]
                if _ignored(tri_plane[tri], ign):
                    continue
                s = _ray_tri(o, d, v0[tri], e1[tri], e2[tri])
                if s > smin and s < smax:
                    if nh == cap:
                        return -1
                    out_s[nh] = s
                    out_tri[nh] = tri
                    nh += 1
        else:
            stack[sp] = left[nd]
            stack[sp + 1] = right[nd]
            sp += 2
    # Insertion sort by (s, tri) so results do not depend on traversal order.
    for i in range(1, nh):
        s = out_s[i]
        t = out_tri[i]
        j = i - 1
        while j >= 0 and (out_s[j] > s or (out_s[j] == s and out_tri[j] > t)):
            out_s[j + 1] = out_s[j]
            out_tri[j + 1] = out_tri[j]
            j -= 1
        out_s[j + 1] = s
        out_tri[j + 1] = t
    return nh


@njit(cache=True)
def closest_hit(o, d, smin, smax, bvh):
    """Nearest triangle hit along the segment: (parameter, triangle) or (inf, -1)."""
    node_min, node_max, left, right, count, first, order, v0, e1, e2, tri_plane = bvh
    best = np.inf
    best_tri = -1
    if node_min.shape[0] == 0:
        return best, best_tri
    inv = _inv(d)
    stack = np.empty(STACK_SIZE, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        if not _ray_box(o, inv, node_min[nd], node_max[nd], smin, min(smax, best)):
            continue
        c = count[nd]
        if c > 0:
            for k in range(first[nd], first[nd] + c):
                tri = order[k]
                s = _ray_tri(o, d, v0[tri], e1[tri], e2[tri])
                if s > smin and s < smax and (s < best or (s == best and tri < best_tri)):
                    best = s
                    best_tri = tri
        else:
            stack[sp] = left[nd]
            stack[sp + 1] = right[nd]
            sp += 2
    return best, best_tri
