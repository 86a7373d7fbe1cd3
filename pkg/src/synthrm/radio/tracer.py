"""Deterministic ray tracing from a transmitter to receiver points.

Mechanisms:

* line of sight;
* specular reflection by the image method over planar facets, with
  candidate facet sequences pruned per transmitter by exact beam clipping;
* single knife-edge diffraction at convex vertical building corners, for
  receivers whose direct path is obstructed;
* transmission: a blocked LoS or reflected path survives, attenuated by
  every wall/roof slab it crosses.

Polarization is vertical at the transmitter. At each bounce the field is
split into TE/TM parts, reflected, and projected back onto the vertical
polarization of the outgoing ray (cross-polar energy is discarded).

Per receiver, path amplitudes are accumulated in a fixed order: LoS, then by
interaction count, reflections in lexicographic facet order before
diffraction edges, so results do not depend on thread scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numba import njit, prange

from ..scenegen import Scene, SemanticClass
from .antenna import AntennaConfig, packed_gain
from .bvh import BVH, segment_blocked, segment_hits
from .physics import fresnel_te_tm, _knife_edge_db, noise_power, wavelength

MAX_POLY = 24
MAX_HITS = 16
PLANE_TOL = 5e-3
MAX_SEQUENCES = 400_000


class InteractionKind(str, Enum):
    REFLECTION = "Reflection"
    DIFFRACTION = "Diffraction"
    TRANSMISSION = "Transmission"


_KIND_CODES = {1: InteractionKind.REFLECTION, 2: InteractionKind.DIFFRACTION, 3: InteractionKind.TRANSMISSION}


@dataclass(frozen=True)
class RadioConfig:
    frequency: float = 3.5e9
    bandwidth: float = 1e6
    tx_power: float = 30.0
    temperature: float = 293.0
    max_depth: int = 20
    los: bool = True
    specular_reflection: bool = True
    refraction: bool = True
    diffraction: bool = True
    antenna: AntennaConfig = field(default_factory=AntennaConfig)
    # Exhaustive image enumeration is only tractable at small depth.
    specular_depth_cap: int = 3
    wall_thickness: float = 0.2
    min_transmitted_gain_db: float = -250.0

    def __post_init__(self):
        if not (self.frequency > 0 and self.bandwidth > 0):
            raise ValueError("frequency and bandwidth must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if isinstance(self.antenna, dict):
            object.__setattr__(self, "antenna", AntennaConfig(**self.antenna))

    @property
    def wavelength(self) -> float:
        return wavelength(self.frequency)

    @property
    def specular_depth(self) -> int:
        if not self.specular_reflection:
            return 0
        return int(min(self.max_depth, self.specular_depth_cap))

    @property
    def noise_dbm(self) -> float:
        return noise_power(self.bandwidth, self.temperature)

    def with_(self, **kw) -> "RadioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "antenna"}
        d["antenna"] = self.antenna.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RadioConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PropagationPath:
    vertices: np.ndarray
    kinds: tuple
    length: float
    gain: complex
    departure_dir: np.ndarray
    arrival_dir: np.ndarray

    @property
    def num_interactions(self) -> int:
        return len(self.kinds)


# ----------------------------------------------------------------------------
# Geometry preprocessing
# ----------------------------------------------------------------------------

def _hull2d(pts: np.ndarray) -> np.ndarray:
    """Indices of the CCW convex hull (monotone chain)."""
    order = sorted(range(len(pts)), key=lambda i: (pts[i, 0], pts[i, 1]))

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    lower, upper = [], []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 1e-12:
            lower.pop()
        lower.append(i)
    for i in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 1e-12:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1])


def _plane_key(n, d):
    return (round(float(n[0]), 9) + 0.0, round(float(n[1]), 9) + 0.0, round(float(n[2]), 9) + 0.0,
            round(float(d), 6) + 0.0)


class _Geometry:
    """Flattened arrays shared by every query against one scene."""

    def __init__(self, scene: Scene):
        tris = scene.vertices
        normals = scene.normals
        offsets = np.einsum("ij,ij->i", normals, tris[:, 0]) if len(tris) else np.zeros(0)
        plane_ids = {}
        tri_plane = np.empty(len(tris), np.int64)
        for i in range(len(tris)):
            key = _plane_key(normals[i], offsets[i])
            tri_plane[i] = plane_ids.setdefault(key, len(plane_ids))
        self.plane_lookup = plane_ids
        self.plane_n = np.array([k[:3] for k in plane_ids], dtype=np.float64).reshape(-1, 3)
        self.plane_d = np.array([k[3] for k in plane_ids], dtype=np.float64)
        self.tri_plane = tri_plane
        self.bvh = BVH(tris, tri_plane)
        self.tri_n = np.ascontiguousarray(normals, dtype=np.float64)
        self.tri_mat = np.asarray(scene.material_ids, np.int64)
        ground = (scene.semantic == SemanticClass.TERRAIN) | (scene.semantic == SemanticClass.ROAD)
        self.tri_trans = ~ground

        facets = np.unique(scene.facet_ids)
        F = len(facets)
        self.f_n = np.zeros((F, 3))
        self.f_d = np.zeros(F)
        self.f_plane = np.zeros(F, np.int64)
        self.f_mat = np.zeros(F, np.int64)
        self.f_axis = np.zeros(F, np.int64)
        self.f_nv = np.zeros(F, np.int64)
        self.f_poly3 = np.zeros((F, MAX_POLY, 3))
        self.f_poly2 = np.zeros((F, MAX_POLY, 2))
        self.facet_ids = facets
        for k, fid in enumerate(facets):
            members = np.nonzero(scene.facet_ids == fid)[0]
            t0 = members[0]
            n = normals[t0]
            self.f_n[k] = n
            self.f_d[k] = offsets[t0]
            self.f_plane[k] = tri_plane[t0]
            self.f_mat[k] = scene.material_ids[t0]
            axis = int(np.argmax(np.abs(n)))
            keep = [a for a in range(3) if a != axis]
            pts3 = tris[members].reshape(-1, 3)
            pts2 = pts3[:, keep]
            hull = _hull2d(pts2)
            if len(hull) > MAX_POLY:
                raise ValueError(f"facet {fid} has more than {MAX_POLY} hull vertices")
            self.f_axis[k] = axis
            self.f_nv[k] = len(hull)
            self.f_poly3[k, : len(hull)] = pts3[hull]
            self.f_poly2[k, : len(hull)] = pts2[hull]

        edges = []
        for fp, h in zip(scene.footprints, scene.heights):
            poly = np.asarray(fp)
            area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
            if area < 0:
                poly = poly[::-1]
            k = len(poly)
            for i in range(k):
                p_prev, p, p_next = poly[i - 1], poly[i], poly[(i + 1) % k]
                e0, e1 = p - p_prev, p_next - p
                if e0[0] * e1[1] - e0[1] * e1[0] <= 0:
                    continue  # reflex or straight corner
                nA = np.array([e0[1], -e0[0]]) / np.linalg.norm(e0)
                nB = np.array([e1[1], -e1[0]]) / np.linalg.norm(e1)
                pa = plane_ids.get(_plane_key((nA[0], nA[1], 0.0), nA @ p), -1)
                pb = plane_ids.get(_plane_key((nB[0], nB[1], 0.0), nB @ p), -1)
                edges.append((p[0], p[1], scene.datum_z, float(h), nA[0], nA[1], nB[0], nB[1], pa, pb))
        E = np.array(edges, dtype=np.float64).reshape(-1, 10)
        self.e_xy = np.ascontiguousarray(E[:, 0:2])
        self.e_z = np.ascontiguousarray(E[:, 2:4])
        self.e_nA = np.ascontiguousarray(E[:, 4:6])
        self.e_nB = np.ascontiguousarray(E[:, 6:8])
        self.e_planes = np.ascontiguousarray(E[:, 8:10]).astype(np.int64)

    @property
    def num_facets(self) -> int:
        return len(self.f_d)


# ----------------------------------------------------------------------------
# Beam-pruned facet sequences
# ----------------------------------------------------------------------------

@njit(cache=True)
def _clip_poly(poly, nv, n, d, out):
    """Keep the part of a convex 3D polygon with ``n.x - d >= 0``."""
    m = 0
    tol = -1e-9
    for i in range(nv):
        a = poly[i]
        b = poly[(i + 1) % nv]
        da = n[0] * a[0] + n[1] * a[1] + n[2] * a[2] - d
        db = n[0] * b[0] + n[1] * b[1] + n[2] * b[2] - d
        ina = da >= tol
        inb = db >= tol
        if ina:
            if m < out.shape[0]:
                out[m] = a
            m += 1
        if ina != inb:
            s = da / (da - db)
            if m < out.shape[0]:
                out[m] = a + s * (b - a)
            m += 1
    return min(m, out.shape[0])


@njit(cache=True)
def _poly_area(poly, nv):
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for i in range(nv):
        a = poly[i]
        b = poly[(i + 1) % nv]
        sx += a[1] * b[2] - a[2] * b[1]
        sy += a[2] * b[0] - a[0] * b[2]
        sz += a[0] * b[1] - a[1] * b[0]
    return 0.5 * math.sqrt(sx * sx + sy * sy + sz * sz)


@njit(cache=True)
def _expand(apex, ap, ap_nv, parent, f_n, f_d, f_plane, f_poly3, f_nv, out_poly, out_nv):
    """Facets reachable through the beam from ``apex`` via aperture ``ap`` on ``parent``."""
    F = f_d.shape[0]
    buf_a = np.empty((MAX_POLY, 3))
    buf_b = np.empty((MAX_POLY, 3))
    sides = np.empty((ap_nv, 4))
    cx = 0.0
    cy = 0.0
    cz = 0.0
    for j in range(ap_nv):
        cx += ap[j, 0]
        cy += ap[j, 1]
        cz += ap[j, 2]
    cx /= ap_nv
    cy /= ap_nv
    cz /= ap_nv
    for j in range(ap_nv):
        a = ap[j] - apex
        b = ap[(j + 1) % ap_nv] - apex
        m = np.cross(a, b)
        nm = math.sqrt(m[0] ** 2 + m[1] ** 2 + m[2] ** 2)
        if nm == 0.0:
            sides[j, :] = 0.0
            continue
        m /= nm
        if m[0] * (cx - apex[0]) + m[1] * (cy - apex[1]) + m[2] * (cz - apex[2]) < 0:
            m = -m
        sides[j, 0] = m[0]
        sides[j, 1] = m[1]
        sides[j, 2] = m[2]
        sides[j, 3] = m[0] * apex[0] + m[1] * apex[1] + m[2] * apex[2]
    count = 0
    for g in range(F):
        out_nv[g] = 0
        if g == parent or f_plane[g] == f_plane[parent]:
            continue
        ng = f_n[g]
        if ng[0] * apex[0] + ng[1] * apex[1] + ng[2] * apex[2] - f_d[g] <= PLANE_TOL:
            continue
        nv = _clip_poly(f_poly3[g], f_nv[g], f_n[parent], f_d[parent], buf_a)
        cur = buf_a
        other = buf_b
        for j in range(ap_nv):
            if nv < 3:
                break
            if sides[j, 0] == 0.0 and sides[j, 1] == 0.0 and sides[j, 2] == 0.0:
                continue
            nv = _clip_poly(cur, nv, sides[j, :3], sides[j, 3], other)
            cur, other = other, cur
        if nv < 3 or _poly_area(cur, nv) <= 1e-9:
            continue
        out_poly[g, :nv] = cur[:nv]
        out_nv[g] = nv
        count += 1
    return count


def _mirror(p, n, d):
    return p - 2.0 * (n @ p - d) * n


def enumerate_sequences(geo: _Geometry, tx: np.ndarray, depth: int):
    """Facet sequences (lexicographic within each depth) and their images."""
    F = geo.num_facets
    seq_fac, seq_img = [], []
    level = []
    for g in range(F):
        if geo.f_n[g] @ tx - geo.f_d[g] > PLANE_TOL and geo.f_nv[g] >= 3:
            img = _mirror(tx, geo.f_n[g], geo.f_d[g])
            level.append(((g,), (img,), geo.f_poly3[g, : geo.f_nv[g]].copy()))
    out_poly = np.zeros((F, MAX_POLY, 3))
    out_nv = np.zeros(F, np.int64)
    for k in range(1, depth + 1):
        for facs, imgs, _ in level:
            seq_fac.append(facs)
            seq_img.append(imgs)
        if len(seq_fac) > MAX_SEQUENCES:
            raise RuntimeError(f"more than {MAX_SEQUENCES} candidate reflection sequences; lower the depth")
        if k == depth:
            break
        nxt = []
        for facs, imgs, ap in level:
            parent = facs[-1]
            apex = imgs[-1]
            ap_c = np.ascontiguousarray(ap)
            _expand(apex, ap_c, len(ap_c), parent, geo.f_n, geo.f_d, geo.f_plane, geo.f_poly3, geo.f_nv,
                    out_poly, out_nv)
            for g in np.nonzero(out_nv)[0]:
                img = _mirror(apex, geo.f_n[g], geo.f_d[g])
                nxt.append((facs + (int(g),), imgs + (img,), out_poly[g, : out_nv[g]].copy()))
        level = nxt
    Q = len(seq_fac)
    D = max(depth, 1)
    lens = np.array([len(f) for f in seq_fac], np.int64)
    fac = np.full((Q, D), -1, np.int64)
    img = np.zeros((Q, D, 3))
    for q in range(Q):
        fac[q, : lens[q]] = seq_fac[q]
        img[q, : lens[q]] = seq_img[q]
    return lens, fac, img


# ----------------------------------------------------------------------------
# Per-receiver kernel
# ----------------------------------------------------------------------------

@njit(cache=True)
def _endpoint_planes(p, plane_n, plane_d, out, start):
    """Write ids of planes passing within PLANE_TOL of ``p`` into ``out[start:start+4]``."""
    k = 0
    for i in range(plane_d.shape[0]):
        if abs(plane_n[i, 0] * p[0] + plane_n[i, 1] * p[1] + plane_n[i, 2] * p[2] - plane_d[i]) < PLANE_TOL:
            if k < 4:
                out[start + k] = i
                k += 1


@njit(cache=True)
def _vpol(k):
    """Unit vertical polarization vector transverse to unit direction ``k``."""
    e = np.array([-k[2] * k[0], -k[2] * k[1], 1.0 - k[2] * k[2]])
    n = math.sqrt(e[0] ** 2 + e[1] ** 2 + e[2] ** 2)
    if n < 1e-9:
        e = np.array([1.0 - k[0] * k[0], -k[0] * k[1], -k[0] * k[2]])
        n = math.sqrt(e[0] ** 2 + e[1] ** 2 + e[2] ** 2)
    return e / n


@njit(cache=True)
def _unit(v):
    n = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    return v / n, n


@njit(cache=True)
def _reflection(k_in, k_out, n, eps):
    cos_i = -(k_in[0] * n[0] + k_in[1] * n[1] + k_in[2] * n[2])
    r_te, r_tm = fresnel_te_tm(eps, cos_i)
    s = np.cross(k_in, n)
    ns = math.sqrt(s[0] ** 2 + s[1] ** 2 + s[2] ** 2)
    if ns < 1e-12:
        # Normal incidence: any transverse s gives the same coefficient.
        s = _vpol(k_in)
    else:
        s = s / ns
    p_in = np.cross(s, k_in)
    p_out = np.cross(s, k_out)
    e_in = _vpol(k_in)
    e_out = _vpol(k_out)
    return (np.dot(e_in, s) * np.dot(e_out, s)) * r_te + (np.dot(e_in, p_in) * np.dot(e_out, p_out)) * r_tm


@njit(cache=True)
def _segment(a, b, ign, refraction, bvh, tri_trans, tri_mat, tri_n, slab_t, alpha, thickness, hs, ht):
    """Returns (status, amplitude factor, transmissions): status 0 clear, 1 transmitted, -1 blocked."""
    d = b - a
    if not refraction:
        if segment_blocked(a, d, 1e-9, 1.0 - 1e-9, ign, bvh):
            return -1, 0.0, 0
        return 0, 1.0, 0
    nh = segment_hits(a, d, 1e-9, 1.0 - 1e-9, ign, bvh, hs, ht)
    if nh == 0:
        return 0, 1.0, 0
    if nh < 0:
        return -1, 0.0, 0
    du, L = _unit(d)
    f = 1.0
    for i in range(nh):
        tri = ht[i]
        if not tri_trans[tri]:
            return -1, 0.0, 0
        c = abs(du[0] * tri_n[tri, 0] + du[1] * tri_n[tri, 1] + du[2] * tri_n[tri, 2])
        m = tri_mat[tri]
        f *= slab_t[m] * math.exp(-alpha[m] * thickness / max(c, 1e-6))
    return 1, f, nh


@njit(cache=True)
def _record(rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir, pts, kinds, npts, length, gain):
    i = rec_n[0]
    if i >= rec_ni.shape[0]:
        rec_n[1] = 1  # overflow flag
        return
    rec_ni[i] = npts - 2
    for j in range(npts):
        rec_vert[i, j] = pts[j]
    for j in range(npts - 2):
        rec_kind[i, j] = kinds[j]
    rec_len[i] = length
    rec_gain[i] = gain
    d0, _ = _unit(pts[1] - pts[0])
    d1, _ = _unit(pts[npts - 1] - pts[npts - 2])
    rec_dir[i, 0] = d0
    rec_dir[i, 1] = d1
    rec_n[0] = i + 1


@njit(cache=True)
def _trace_point(tx, rx, tx_ign, geo, fac, seqs, edges, mats, par, flags, ant, rec):
    """Complex amplitude sum at ``rx`` (transmit antenna gain applied)."""
    bvh, plane_n, plane_d, tri_trans, tri_mat, tri_n = geo
    f_n, f_d, f_plane, f_axis, f_poly2, f_nv, f_mat = fac
    seq_len, seq_fac, seq_img = seqs
    e_xy, e_z, e_nA, e_nB, e_planes = edges
    eps_m, slab_t, alpha = mats
    k0 = par[0]
    lam = par[1]
    thickness = par[2]
    min_pow = par[3]
    use_los = flags[0] != 0
    refraction = flags[2] != 0
    use_diff = flags[3] != 0
    max_depth = flags[4]
    rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir = rec
    recording = rec_ni.shape[0] > 0

    rx_ign = np.full(4, -1, np.int64)
    _endpoint_planes(rx, plane_n, plane_d, rx_ign, 0)
    ign = np.full(8, -1, np.int64)
    hs = np.empty(MAX_HITS)
    ht = np.empty(MAX_HITS, np.int64)
    pts = np.empty((seq_fac.shape[1] + 2 + MAX_HITS * (seq_fac.shape[1] + 1), 3))
    kinds = np.empty(pts.shape[0], np.int64)
    path_pts = np.empty((seq_fac.shape[1] + 2, 3))
    total = 0.0 + 0.0j

    # --- line of sight -----------------------------------------------------
    for j in range(4):
        ign[j] = tx_ign[j]
        ign[4 + j] = rx_ign[j]
    d = rx - tx
    du, L = _unit(d)
    los_blocked = segment_blocked(tx, d, 1e-9, 1.0 - 1e-9, ign, bvh)
    if use_los and L > 0:
        status, fseg, nt = 0, 1.0, 0
        if los_blocked:
            status, fseg, nt = _segment(tx, rx, ign, refraction, bvh, tri_trans, tri_mat, tri_n, slab_t,
                                        alpha, thickness, hs, ht)
        if status >= 0 and nt <= max_depth:
            amp = fseg * lam / (4.0 * math.pi * L)
            gtx = packed_gain(ant, du[0], du[1], du[2])
            if status == 0 or amp * amp * gtx >= min_pow:
                a = amp * np.exp(-1j * k0 * L)
                total += math.sqrt(gtx) * a
                if recording:
                    pts[0] = tx
                    for i in range(nt):
                        pts[1 + i] = tx + hs[i] * d
                        kinds[i] = 3
                    pts[1 + nt] = rx
                    _record(rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir, pts, kinds,
                            nt + 2, L, a)

    # --- specular reflections (sequences already ordered) ------------------
    Q = seq_len.shape[0]
    for q in range(Q):
        k = seq_len[q]
        last = seq_fac[q, k - 1]
        nl = f_n[last]
        if nl[0] * rx[0] + nl[1] * rx[1] + nl[2] * rx[2] - f_d[last] <= PLANE_TOL:
            continue
        cur = rx
        ok = True
        for i in range(k - 1, -1, -1):
            f = seq_fac[q, i]
            n = f_n[f]
            img = seq_img[q, i]
            dirv = img - cur
            den = n[0] * dirv[0] + n[1] * dirv[1] + n[2] * dirv[2]
            if den == 0.0:
                ok = False
                break
            s = (f_d[f] - (n[0] * cur[0] + n[1] * cur[1] + n[2] * cur[2])) / den
            if not (s > 1e-9 and s < 1.0 - 1e-9):
                ok = False
                break
            p = cur + s * dirv
            # Point-in-convex-polygon in the facet's projection plane.
            ax = f_axis[f]
            i0 = 1 if ax == 0 else 0
            i1 = 1 if ax == 2 else 2
            px = p[i0]
            py = p[i1]
            nv = f_nv[f]
            for j in range(nv):
                x0 = f_poly2[f, j, 0]
                y0 = f_poly2[f, j, 1]
                x1 = f_poly2[f, (j + 1) % nv, 0]
                y1 = f_poly2[f, (j + 1) % nv, 1]
                cr = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if cr < -1e-9 * (abs(x1 - x0) + abs(y1 - y0)):
                    ok = False
                    break
            if not ok:
                break
            path_pts[i + 1] = p
            cur = p
        if not ok:
            continue
        path_pts[0] = tx
        path_pts[k + 1] = rx
        # Each reflection point must see its neighbours from the facet's front side.
        for i in range(k):
            f = seq_fac[q, i]
            n = f_n[f]
            a = path_pts[i]
            b = path_pts[i + 2]
            if n[0] * a[0] + n[1] * a[1] + n[2] * a[2] - f_d[f] <= PLANE_TOL:
                ok = False
                break
            if n[0] * b[0] + n[1] * b[1] + n[2] * b[2] - f_d[f] <= PLANE_TOL and i < k - 1:
                ok = False
                break
        if not ok:
            continue
        length = 0.0
        for i in range(k + 1):
            _, l = _unit(path_pts[i + 1] - path_pts[i])
            if l < 1e-6:
                ok = False
                break
            length += l
        if not ok:
            continue
        # Occlusion / transmission, segment by segment.
        factor = 1.0
        ntrans = 0
        npts = 0
        all_clear = True
        for i in range(k + 1):
            for j in range(8):
                ign[j] = -1
            if i == 0:
                for j in range(4):
                    ign[j] = tx_ign[j]
            else:
                ign[0] = f_plane[seq_fac[q, i - 1]]
            if i == k:
                for j in range(4):
                    ign[4 + j] = rx_ign[j]
            else:
                ign[4] = f_plane[seq_fac[q, i]]
            a = path_pts[i]
            b = path_pts[i + 1]
            status, fseg, nt = _segment(a, b, ign, refraction, bvh, tri_trans, tri_mat, tri_n, slab_t,
                                        alpha, thickness, hs, ht)
            if status < 0:
                ok = False
                break
            if status == 1:
                all_clear = False
            factor *= fseg
            ntrans += nt
            if recording:
                pts[npts] = a
                if i > 0:
                    kinds[npts - 1] = 1
                npts += 1
                for j in range(nt):
                    pts[npts] = a + hs[j] * (b - a)
                    kinds[npts - 1] = 3
                    npts += 1
        if not ok or k + ntrans > max_depth:
            continue
        coeff = 1.0 + 0.0j
        for i in range(k):
            f = seq_fac[q, i]
            kin, _ = _unit(path_pts[i + 1] - path_pts[i])
            kout, _ = _unit(path_pts[i + 2] - path_pts[i + 1])
            coeff *= _reflection(kin, kout, f_n[f], eps_m[f_mat[f]])
        dep, _ = _unit(path_pts[1] - path_pts[0])
        a = factor * coeff * lam / (4.0 * math.pi * length) * np.exp(-1j * k0 * length)
        gtx = packed_gain(ant, dep[0], dep[1], dep[2])
        if not all_clear and abs(a) ** 2 * gtx < min_pow:
            continue
        total += math.sqrt(gtx) * a
        if recording:
            pts[npts] = rx
            npts += 1
            _record(rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir, pts, kinds, npts, length, a)

    # --- knife-edge diffraction around convex vertical corners -------------
    if use_diff and los_blocked and max_depth >= 1:
        E = e_z.shape[0]
        for e in range(E):
            px = e_xy[e, 0]
            py = e_xy[e, 1]
            ax_ = e_nA[e, 0]
            ay_ = e_nA[e, 1]
            bx_ = e_nB[e, 0]
            by_ = e_nB[e, 1]
            # Both endpoints in the exterior wedge (on-face counts as exterior).
            ta = ax_ * (tx[0] - px) + ay_ * (tx[1] - py)
            tb = bx_ * (tx[0] - px) + by_ * (tx[1] - py)
            ra = ax_ * (rx[0] - px) + ay_ * (rx[1] - py)
            rb = bx_ * (rx[0] - px) + by_ * (rx[1] - py)
            if not ((ta > -PLANE_TOL or tb > -PLANE_TOL) and (ra > -PLANE_TOL or rb > -PLANE_TOL)):
                continue
            # The direct line must cut through the corner's interior quadrant.
            lo = 0.0
            hi = 1.0
            for f0, f1 in ((ta, ra - ta), (tb, rb - tb)):
                # want f0 + s * f1 < -PLANE_TOL
                if f1 == 0.0:
                    if f0 >= -PLANE_TOL:
                        hi = -1.0
                elif f1 > 0:
                    hi = min(hi, (-PLANE_TOL - f0) / f1)
                else:
                    lo = max(lo, (-PLANE_TOL - f0) / f1)
            if not lo < hi:
                continue
            d1h = math.hypot(px - tx[0], py - tx[1])
            d2h = math.hypot(px - rx[0], py - rx[1])
            if d1h < 1e-9 or d2h < 1e-9:
                continue
            z = tx[2] + (rx[2] - tx[2]) * d1h / (d1h + d2h)
            if not (z > e_z[e, 0] + 1e-9 and z < e_z[e, 1] - 1e-9):
                continue
            ep = np.array([px, py, z])
            for j in range(8):
                ign[j] = -1
            for j in range(4):
                ign[j] = tx_ign[j]
            ign[4] = e_planes[e, 0]
            ign[5] = e_planes[e, 1]
            if segment_blocked(tx, ep - tx, 1e-9, 1.0 - 1e-9, ign, bvh):
                continue
            for j in range(4):
                ign[j] = rx_ign[j]
            if segment_blocked(ep, rx - ep, 1e-9, 1.0 - 1e-9, ign, bvh):
                continue
            dep, d1 = _unit(ep - tx)
            _, d2 = _unit(rx - ep)
            # Clearance of the corner from the direct line.
            w = ep - tx
            proj = w[0] * du[0] + w[1] * du[1] + w[2] * du[2]
            h2 = w[0] ** 2 + w[1] ** 2 + w[2] ** 2 - proj * proj
            h = math.sqrt(max(h2, 0.0))
            nu = h * math.sqrt(2.0 * (d1 + d2) / (lam * d1 * d2))
            loss = 10.0 ** (-_knife_edge_db(nu) / 20.0)
            length = d1 + d2
            a = loss * lam / (4.0 * math.pi * length) * np.exp(-1j * k0 * length)
            total += math.sqrt(packed_gain(ant, dep[0], dep[1], dep[2])) * a
            if recording:
                pts[0] = tx
                pts[1] = ep
                pts[2] = rx
                kinds[0] = 2
                _record(rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir, pts, kinds, 3, length, a)
    return total


@njit(parallel=True, cache=True)
def _trace_many(tx, rxs, tx_ign, geo, fac, seqs, edges, mats, par, flags, ant):
    # Parallel loops cannot capture nested tuples, so unpack and rebuild per iteration.
    bvh, plane_n, plane_d, tri_trans, tri_mat, tri_n = geo
    b0, b1, b2, b3, b4, b5, b6, b7, b8, b9, b10 = bvh
    f0, f1, f2, f3, f4, f5, f6 = fac
    s0, s1, s2 = seqs
    e0, e1, e2, e3, e4 = edges
    m0, m1, m2 = mats
    N = rxs.shape[0]
    out = np.zeros(N, np.complex128)
    r0 = np.zeros(2, np.int64)
    r1 = np.zeros(0, np.int64)
    r2 = np.zeros((0, 1), np.int64)
    r3 = np.zeros((0, 2, 3))
    r4 = np.zeros(0)
    r5 = np.zeros(0, np.complex128)
    r6 = np.zeros((0, 2, 3))
    for i in prange(N):
        g = ((b0, b1, b2, b3, b4, b5, b6, b7, b8, b9, b10), plane_n, plane_d, tri_trans, tri_mat, tri_n)
        out[i] = _trace_point(tx, rxs[i], tx_ign, g, (f0, f1, f2, f3, f4, f5, f6), (s0, s1, s2),
                              (e0, e1, e2, e3, e4), (m0, m1, m2), par, flags, ant, (r0, r1, r2, r3, r4, r5, r6))
    return out


# ----------------------------------------------------------------------------
# Public API
# ----------------------------------------------------------------------------

class Tracer:
    """Occlusion structure and facet tables for one (scene, config) pair.

    Built from Scene triangles only; immutable and shareable. Per-transmitter
    reflection sequences are cached.
    """

    def __init__(self, scene: Scene, config: RadioConfig | None = None):
        self.scene = scene
        self.config = config or RadioConfig()
        self.geo = _Geometry(scene)
        cfg = self.config
        eps = np.array([m.complex_permittivity(cfg.frequency) for m in scene.materials], np.complex128)
        r0 = np.array([abs(fresnel_te_tm(e, 1.0)[0]) for e in eps])
        k0 = 2.0 * math.pi / cfg.wavelength
        self._mats = (eps, 1.0 - r0 ** 2, k0 * np.abs(np.sqrt(eps).imag))
        self._par = np.array([k0, cfg.wavelength, cfg.wall_thickness, 10.0 ** (cfg.min_transmitted_gain_db / 10.0)])
        self._flags = np.array([cfg.los, cfg.specular_depth, cfg.refraction, cfg.diffraction, cfg.max_depth],
                               np.int64)
        self._ant = cfg.antenna.packed()
        g = self.geo
        self._geo = (g.bvh.arrays(), g.plane_n, g.plane_d, g.tri_trans, g.tri_mat, g.tri_n)
        self._fac = (g.f_n, g.f_d, g.f_plane, g.f_axis, g.f_poly2, g.f_nv, g.f_mat)
        self._edges = (g.e_xy, g.e_z, g.e_nA, g.e_nB, g.e_planes)
        self._seq_cache: dict = {}

    def sequences(self, tx) -> tuple:
        key = tuple(float(x) for x in tx)
        if key not in self._seq_cache:
            self._seq_cache[key] = enumerate_sequences(self.geo, np.asarray(key), self.config.specular_depth)
        return self._seq_cache[key]

    def _tx_ign(self, tx):
        out = np.full(4, -1, np.int64)
        _endpoint_planes(tx, self.geo.plane_n, self.geo.plane_d, out, 0)
        return out

    def line_of_sight(self, a, b) -> bool:
        """True if no scene triangle blocks the open segment a-b (endpoint planes ignored)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        ign = np.full(8, -1, np.int64)
        _endpoint_planes(a, self.geo.plane_n, self.geo.plane_d, ign, 0)
        _endpoint_planes(b, self.geo.plane_n, self.geo.plane_d, ign, 4)
        return not segment_blocked(a, b - a, 1e-9, 1.0 - 1e-9, ign, self._geo[0])

    def amplitudes(self, tx, rx_points) -> np.ndarray:
        """Complex received amplitude per point, transmit antenna gain included."""
        tx = np.asarray(tx, dtype=np.float64)
        rxs = np.ascontiguousarray(np.asarray(rx_points, dtype=np.float64).reshape(-1, 3))
        return _trace_many(tx, rxs, self._tx_ign(tx), self._geo, self._fac, self.sequences(tx), self._edges,
                           self._mats, self._par, self._flags, self._ant)

    def path_gain(self, tx, rx_points) -> np.ndarray:
        return np.abs(self.amplitudes(tx, rx_points)) ** 2

    def paths(self, tx, rx, max_paths: int = 4096) -> list[PropagationPath]:
        tx = np.asarray(tx, dtype=np.float64)
        rx = np.asarray(rx, dtype=np.float64)
        seqs = self.sequences(tx)
        nvert = seqs[1].shape[1] + 2 + MAX_HITS * (seqs[1].shape[1] + 1)
        rec = (np.zeros(2, np.int64), np.zeros(max_paths, np.int64), np.zeros((max_paths, nvert), np.int64),
               np.zeros((max_paths, nvert, 3)), np.zeros(max_paths), np.zeros(max_paths, np.complex128),
               np.zeros((max_paths, 2, 3)))
        _trace_point(tx, rx, self._tx_ign(tx), self._geo, self._fac, seqs, self._edges, self._mats, self._par,
                     self._flags, self._ant, rec)
        rec_n, rec_ni, rec_kind, rec_vert, rec_len, rec_gain, rec_dir = rec
        if rec_n[1]:
            raise RuntimeError("path record buffer overflow; raise max_paths")
        out = []
        for i in range(rec_n[0]):
            ni = int(rec_ni[i])
            out.append(PropagationPath(
                vertices=rec_vert[i, : ni + 2].copy(),
                kinds=tuple(_KIND_CODES[int(c)] for c in rec_kind[i, :ni]),
                length=float(rec_len[i]),
                gain=complex(rec_gain[i]),
                departure_dir=rec_dir[i, 0].copy(),
                arrival_dir=rec_dir[i, 1].copy(),
            ))
        return out


def compute_paths(scene: Scene, tx, rx, config: RadioConfig, tracer: Tracer | None = None) -> list[PropagationPath]:
    """All valid propagation paths between ``tx`` and ``rx`` (antenna gains excluded)."""
    tracer = tracer or Tracer(scene, config)
    return tracer.paths(tx, rx)
