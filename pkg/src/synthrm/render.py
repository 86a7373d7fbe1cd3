"""Pinhole camera model and a z-buffer rasterizer for pixel-aligned buffers.

Conventions: camera-frame point ``p_c = R @ p_w + t``; the camera looks down
``+z`` with ``x`` right and ``y`` down. Pixel centers sit on integer
coordinates, so pixel ``(u, v)`` is the ray ``K^-1 (u, v, 1)``. Depth is the
camera-frame ``z`` of the nearest surface (not the Euclidean ray length).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit, prange

from .scenegen import Scene, SemanticClass, TX_HEIGHT

NEAR_PLANE = 0.05
SUN_DIRECTION = np.array([0.3, 0.2, 0.9]) / np.linalg.norm([0.3, 0.2, 0.9])
AMBIENT = 0.3
SKY_COLOR = (0.62, 0.78, 0.95)
CLASS_COLORS = {
    SemanticClass.TERRAIN: (0.40, 0.52, 0.33),
    SemanticClass.ROAD: (0.32, 0.32, 0.34),
    SemanticClass.BUILDING_WALL: (0.78, 0.74, 0.68),
    SemanticClass.BUILDING_ROOF: (0.56, 0.42, 0.36),
}


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        self.validate()

    def validate(self) -> None:
        if np.abs(self.R.T @ self.R - np.eye(3)).max() >= 1e-9 or np.linalg.det(self.R) <= 0:
            raise ValueError("R must be a proper rotation")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_camera(self, points_w: np.ndarray) -> np.ndarray:
        return np.asarray(points_w) @ self.R.T + self.t

    def project(self, points_w: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> (N, 3) array of ``(u, v, z_c)``."""
        pc = self.to_camera(np.atleast_2d(points_w))
        u = self.fx * pc[:, 0] / pc[:, 2] + self.cx
        v = self.fy * pc[:, 1] / pc[:, 2] + self.cy
        return np.column_stack([u, v, pc[:, 2]])

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fov_deg: float = 60.0,
                up=(0.0, 0.0, 1.0)) -> "CameraModel":
        """Camera at ``eye`` aimed at ``target`` with horizontal field of view ``fov_deg``."""
        eye = np.asarray(eye, dtype=np.float64)
        f = np.asarray(target, dtype=np.float64) - eye
        f /= np.linalg.norm(f)
        up = np.asarray(up, dtype=np.float64)
        r = np.cross(f, up)
        if np.linalg.norm(r) < 1e-9:
            r = np.cross(f, np.array([0.0, 1.0, 0.0]))
        r /= np.linalg.norm(r)
        d = np.cross(f, r)
        R = np.vstack([r, d, f])
        # Re-orthonormalize so the 1e-9 invariant holds after float rounding.
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        fx = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0, width, height, R, -R @ eye)

    def to_dict(self) -> dict:
        return {
            "K": self.K.reshape(-1).tolist(),
            "R": self.R.reshape(-1).tolist(),
            "t": self.t.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        K = np.asarray(d["K"], dtype=np.float64).reshape(3, 3)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], d["width"], d["height"], d["R"], d["t"])


@dataclass(eq=False)
class ViewBuffers:
    """Pixel-aligned optical buffers; ``triangle_id`` is -1 on sky pixels."""

    depth: np.ndarray
    normal: np.ndarray
    semantic: np.ndarray
    color: np.ndarray
    albedo: np.ndarray
    roughness: np.ndarray
    triangle_id: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def visible_triangles(self) -> np.ndarray:
        ids = np.unique(self.triangle_id)
        return ids[ids >= 0]


@njit(cache=True)
def _clip_near(tri, near, out):
    """Clip a camera-space triangle against ``z >= near``; returns vertex count."""
    n = 0
    for i in range(3):
        a = tri[i]
        b = tri[(i + 1) % 3]
        ina = a[2] >= near
        inb = b[2] >= near
        if ina:
            out[n] = a
            n += 1
        if ina != inb:
            s = (near - a[2]) / (b[2] - a[2])
            out[n] = a + s * (b - a)
            out[n, 2] = near
            n += 1
    return n


@njit(cache=True)
def _setup_triangles(tri_cam, fx, fy, cx, cy, near):
    """Clip and project; emits screen-space sub-triangles with their parent id."""
    T = tri_cam.shape[0]
    sub = np.empty((2 * T, 3, 2))
    parent = np.empty(2 * T, np.int64)
    poly = np.empty((4, 3))
    ns = 0
    for k in range(T):
        tri = tri_cam[k]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        nn = np.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
        if nn == 0.0:
            continue
        # Edge-on: the triangle's plane passes through the camera center.
        if abs(n[0] * tri[0, 0] + n[1] * tri[0, 1] + n[2] * tri[0, 2]) <= 1e-12 * nn:
            continue
        m = _clip_near(tri, near, poly)
        if m < 3:
            continue
        for j in range(1, m - 1):
            for q in range(3):
                p = poly[0] if q == 0 else poly[j + q - 1]
                sub[ns, q, 0] = fx * p[0] / p[2] + cx
                sub[ns, q, 1] = fy * p[1] / p[2] + cy
            parent[ns] = k
            ns += 1
    return sub[:ns], parent[:ns]


@njit(parallel=True, cache=True)
def _rasterize(sub, parent, planes, width, height, fx, fy, cx, cy, near):
    depth = np.full((height, width), np.inf)
    tid = np.full((height, width), -1, np.int64)
    S = sub.shape[0]
    vmin = np.empty(S)
    vmax = np.empty(S)
    for s in range(S):
        vmin[s] = min(sub[s, 0, 1], sub[s, 1, 1], sub[s, 2, 1])
        vmax[s] = max(sub[s, 0, 1], sub[s, 1, 1], sub[s, 2, 1])
    for v in prange(height):
        ry = (v - cy) / fy
        for s in range(S):
            if v < vmin[s] or v > vmax[s]:
                continue
            x0, y0 = sub[s, 0, 0], sub[s, 0, 1]
            x1, y1 = sub[s, 1, 0], sub[s, 1, 1]
            x2, y2 = sub[s, 2, 0], sub[s, 2, 1]
            area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if area == 0.0:
                continue
            sgn = 1.0 if area > 0 else -1.0
            umin = max(0, int(math.ceil(min(x0, x1, x2))))
            umax = min(width - 1, int(math.floor(max(x0, x1, x2))))
            k = parent[s]
            pn0, pn1, pn2, pd = planes[k, 0], planes[k, 1], planes[k, 2], planes[k, 3]
            for u in range(umin, umax + 1):
                w0 = sgn * ((x1 - u) * (y2 - v) - (x2 - u) * (y1 - v))
                w1 = sgn * ((x2 - u) * (y0 - v) - (x0 - u) * (y2 - v))
                w2 = sgn * ((x0 - u) * (y1 - v) - (x1 - u) * (y0 - v))
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                rx = (u - cx) / fx
                denom = pn0 * rx + pn1 * ry + pn2
                if denom == 0.0:
                    continue
                z = pd / denom
                if z < near * 0.999:
                    continue
                if z < depth[v, u]:
                    depth[v, u] = z
                    tid[v, u] = k
    return depth, tid


def encode_depth(depth: np.ndarray, log: bool = False) -> np.ndarray:
    """Linear metres by default; ``log=True`` gives ``log10`` depth (NaN preserved)."""
    d = np.asarray(depth, dtype=np.float32)
    if not log:
        return d
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log10(d.astype(np.float64)).astype(np.float32)


def render_view(scene: Scene, camera: CameraModel) -> ViewBuffers:
    """Rasterize ``scene`` through ``camera`` into depth/normal/semantic/colour buffers."""
    H, W = camera.height, camera.width
    tri_cam = np.ascontiguousarray(scene.vertices @ camera.R.T + camera.t)
    if len(tri_cam):
        n = np.cross(tri_cam[:, 1] - tri_cam[:, 0], tri_cam[:, 2] - tri_cam[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        planes = np.column_stack([n, np.einsum("ij,ij->i", n, tri_cam[:, 0])])
        sub, parent = _setup_triangles(tri_cam, camera.fx, camera.fy, camera.cx, camera.cy, NEAR_PLANE)
        zbuf, tid = _rasterize(sub, parent, planes, W, H, camera.fx, camera.fy, camera.cx, camera.cy,
                               NEAR_PLANE)
    else:
        zbuf, tid = np.full((H, W), np.inf), np.full((H, W), -1, np.int64)

    covered = tid >= 0
    depth = np.where(covered, zbuf, np.nan).astype(np.float32)
    idx = np.where(covered, tid, 0)
    normal = np.where(covered[..., None], scene.normals[idx] if len(tri_cam) else 0.0, 0.0).astype(np.float32)
    semantic = np.full((H, W), int(SemanticClass.SKY), np.uint8)
    albedo = np.zeros((H, W), np.float32)
    roughness = np.zeros((H, W), np.float32)
    color = np.empty((H, W, 3), np.float32)
    color[:] = SKY_COLOR
    if covered.any():
        sem = scene.semantic[idx]
        semantic[covered] = sem[covered]
        mat = scene.materials
        alb = np.array([m.albedo for m in mat])[scene.material_ids[idx]]
        rough = np.array([m.roughness for m in mat])[scene.material_ids[idx]]
        albedo[covered] = alb[covered]
        roughness[covered] = rough[covered]
        base = np.zeros((256, 3))
        for cls, rgb in CLASS_COLORS.items():
            base[int(cls)] = rgb
        shade = AMBIENT + (1 - AMBIENT) * np.clip(scene.normals[idx] @ SUN_DIRECTION, 0.0, 1.0)
        lit = base[sem] * shade[..., None]
        color[covered] = lit[covered]
    return ViewBuffers(depth, normal, semantic, color, albedo, roughness, tid.astype(np.int32))


class TrajectoryKind(str, Enum):
    ORBIT_UAV = "OrbitUAV"
    STREET_VEHICLE = "StreetVehicle"


def sample_trajectory(scene: Scene, kind, count: int, seed: int, width: int = 128, height: int = 128,
                      fov_deg: float = 60.0, orbit_radius: float | None = None,
                      orbit_altitude: float | None = None) -> list[CameraModel]:
    """Camera poses for a UAV orbit or a street-level vehicle drive.

    The orbit defaults to radius ``0.6 * extent`` (outside the built area) at
    ``0.5 * extent`` above the datum, the same geometry for every archetype.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    kind = TrajectoryKind(kind)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    center = scene.center
    extent = scene.extent
    if kind is TrajectoryKind.ORBIT_UAV:
        radius = 0.6 * extent if orbit_radius is None else float(orbit_radius)
        altitude = 0.5 * extent if orbit_altitude is None else float(orbit_altitude)
        if radius <= 0:
            raise ValueError("orbit_radius must be positive")
        phase = rng.uniform(0.0, 2 * math.pi)
        cams = []
        for k in range(count):
            a = phase + 2 * math.pi * k / count
            eye = center + np.array([radius * math.cos(a), radius * math.sin(a), altitude - center[2]])
            cams.append(CameraModel.look_at(eye, center, width, height, fov_deg))
        return cams

    if len(scene.streets) == 0:
        raise ValueError("scene has no road strips for a street-level trajectory")
    x0, y0, x1, y1 = scene.streets[int(rng.integers(len(scene.streets)))]
    along_x = (x1 - x0) >= (y1 - y0)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    lo, hi = (x0, x1) if along_x else (y0, y1)
    mid = 0.5 * (y0 + y1) if along_x else 0.5 * (x0 + x1)
    # Stay clear of the scene edge so the forward view covers the city.
    span = hi - lo
    start = lo + 0.1 * span + rng.uniform(0.0, 0.1 * span)
    step = 0.7 * span / max(count, 1)
    pitch = math.radians(-5.0)
    cams = []
    for k in range(count):
        s = start + k * step
        if sign < 0:
            s = hi - (s - lo)
        eye = np.array([s, mid, scene.datum_z + TX_HEIGHT]) if along_x else np.array([mid, s, scene.datum_z + TX_HEIGHT])
        heading = np.array([sign, 0.0]) if along_x else np.array([0.0, sign])
        fwd = np.array([heading[0] * math.cos(pitch), heading[1] * math.cos(pitch), math.sin(pitch)])
        cams.append(CameraModel.look_at(eye, eye + fwd, width, height, fov_deg))
    return cams
