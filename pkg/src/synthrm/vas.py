"""Visible-surface (VAS) reconstruction from a depth buffer.

Each valid pixel is lifted to world space with ``R^T (D * K^-1 [u, v, 1] - t)``.
Pixel quads are split along the (u, v)-(u+1, v+1) diagonal into two faces
whose centroids become receiver probes. The tracer intersects scene triangles
only, so the mesh never blocks or reflects anything.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import CameraModel

# Quads are culled when depth max/min exceeds this ratio or the spread exceeds
# DEPTH_SPREAD metres (depth discontinuity between foreground and background).
DEPTH_RATIO = 1.15
DEPTH_SPREAD = 2.0
# Quads whose four lifted corners deviate from coplanarity by more than this
# (metres) straddle a crease; their centroids would float off the surface.
CREASE_TOLERANCE = 1e-3
# Inverse depth is affine in (u, v) on any plane, so neighbouring differences
# along a row or column agree. A pixel edge whose inverse-depth difference
# matches neither flanking difference (relative to 1/D, above float32 noise)
# straddles a step or a crease; quads touching it are culled.
KINK_TOLERANCE = 1e-5


@dataclass(frozen=True, eq=False)
class VasMesh:
    """Faces are rows of vertex indices into ``vertices.reshape(-1, 3)``."""

    vertices: np.ndarray
    faces: np.ndarray
    centroids: np.ndarray
    face_normals: np.ndarray
    pixel_of_face: np.ndarray
    face_half: np.ndarray

    @property
    def height(self) -> int:
        return self.vertices.shape[0]

    @property
    def width(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def flat_vertices(self) -> np.ndarray:
        return self.vertices.reshape(-1, 3)


@dataclass(frozen=True)
class ReceiverProbe:
    position: np.ndarray
    face_index: int
    pixel: tuple[int, int]


def _check_depth(depth) -> float:
    d = float(depth)
    if not np.isfinite(d) or d <= 0:
        raise ValueError(f"depth must be finite and positive, got {depth!r}")
    return d


def lift_pixel(u: float, v: float, depth: float, camera: CameraModel) -> np.ndarray:
    d = _check_depth(depth)
    ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return camera.R.T @ (d * ray - camera.t)


def lift_depth_map(depth: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Vectorised lift of an H x W depth map; invalid pixels become NaN."""
    D = np.asarray(depth, dtype=np.float64)
    H, W = D.shape
    vv, uu = np.mgrid[0:H, 0:W].astype(np.float64)
    rays = np.stack([(uu - camera.cx) / camera.fx, (vv - camera.cy) / camera.fy, np.ones_like(uu)], axis=-1)
    valid = np.isfinite(D) & (D > 0)
    pc = np.where(valid[..., None], D[..., None] * rays, np.nan)
    return (pc - camera.t) @ camera.R


def _shift(axis: int, start: int) -> list:
    sl = [slice(None), slice(None)]
    sl[axis] = slice(start, None) if start else slice(0, -1)
    return sl


def _kink_edges(D: np.ndarray, inv: np.ndarray, axis: int, rel_tol: float, ratio: float,
                spread: float) -> np.ndarray:
    """Flags for pixel edges along ``axis`` (1 = u, 0 = v) that fit neither neighbouring plane.

    Flanking differences taken across a depth discontinuity carry no plane
    information and are ignored.
    """
    d = np.diff(inv, axis=axis)
    with np.errstate(invalid="ignore"):
        lo = np.minimum(D[tuple(_shift(axis, 0))], D[tuple(_shift(axis, 1))])
        hi = np.maximum(D[tuple(_shift(axis, 0))], D[tuple(_shift(axis, 1))])
        flank = np.where((hi <= ratio * lo) & (hi - lo <= spread), d, np.nan)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    dp = np.pad(flank, pad, constant_values=np.nan)
    sl = [slice(None), slice(None)]
    sl[axis] = slice(0, -2)
    before = dp[tuple(sl)]
    sl[axis] = slice(2, None)
    after = dp[tuple(sl)]
    sl[axis] = slice(0, -1)
    tol = rel_tol * np.abs(inv[tuple(sl)])
    with np.errstate(invalid="ignore"):
        fits_before = np.abs(d - before) <= tol  # False when the flank is missing
        fits_after = np.abs(d - after) <= tol
    judged = np.isfinite(before) | np.isfinite(after)
    return judged & ~fits_before & ~fits_after


def quad_mask(depth: np.ndarray, points: np.ndarray | None = None, camera: CameraModel | None = None,
              ratio: float = DEPTH_RATIO, spread: float = DEPTH_SPREAD,
              crease_tol: float | None = CREASE_TOLERANCE, kink_tol: float | None = KINK_TOLERANCE) -> np.ndarray:
    """Boolean (H-1, W-1) mask of quads that produce faces."""
    D = np.asarray(depth, dtype=np.float64)
    c = np.stack([D[:-1, :-1], D[:-1, 1:], D[1:, :-1], D[1:, 1:]])
    with np.errstate(invalid="ignore"):
        valid = np.all(np.isfinite(c) & (c > 0), axis=0)
        dmax, dmin = np.nanmax(np.where(valid, c, 1.0), axis=0), np.nanmin(np.where(valid, c, 1.0), axis=0)
        keep = valid & (dmax <= ratio * dmin) & (dmax - dmin <= spread)
    if kink_tol is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.isfinite(D) & (D > 0), 1.0 / D, np.nan)
        su = _kink_edges(D, inv, 1, kink_tol, ratio, spread)  # (H, W-1)
        sv = _kink_edges(D, inv, 0, kink_tol, ratio, spread)  # (H-1, W)
        keep &= ~(su[:-1] | su[1:] | sv[:, :-1] | sv[:, 1:])
    if crease_tol is not None:
        if points is None:
            points = lift_depth_map(D, camera)
        p00, p10, p01, p11 = points[:-1, :-1], points[:-1, 1:], points[1:, :-1], points[1:, 1:]
        n = np.cross(p10 - p00, p01 - p00)
        with np.errstate(invalid="ignore", divide="ignore"):
            off = np.abs(np.einsum("ijk,ijk->ij", n, p11 - p00)) / np.linalg.norm(n, axis=-1)
            keep &= off <= crease_tol
    return keep


def reconstruct_vas(depth: np.ndarray, camera: CameraModel, ratio: float = DEPTH_RATIO,
                    spread: float = DEPTH_SPREAD, crease_tol: float | None = CREASE_TOLERANCE,
                    kink_tol: float | None = KINK_TOLERANCE) -> VasMesh:
    """Triangulate the valid, continuous pixel quads of ``depth`` into a VasMesh."""
    D = np.asarray(depth)
    if D.shape != (camera.height, camera.width):
        raise ValueError(f"depth shape {D.shape} does not match camera {(camera.height, camera.width)}")
    H, W = D.shape
    P = lift_depth_map(D, camera)
    if H < 2 or W < 2:
        keep = np.zeros((max(H - 1, 0), max(W - 1, 0)), bool)
    else:
        keep = quad_mask(D, P, camera, ratio, spread, crease_tol, kink_tol)
    vq, uq = np.nonzero(keep)  # row-major order
    i00 = vq * W + uq
    i10 = i00 + 1
    i01 = i00 + W
    i11 = i01 + 1
    # Winding (00, 11, 10) and (00, 01, 11) yields normals facing the camera.
    faces = np.empty((2 * len(vq), 3), np.int64)
    faces[0::2] = np.column_stack([i00, i11, i10])
    faces[1::2] = np.column_stack([i00, i01, i11])
    flat = P.reshape(-1, 3)
    a, b, c = flat[faces[:, 0]], flat[faces[:, 1]], flat[faces[:, 2]]
    centroids = (a + b + c) / 3.0
    n = np.cross(b - a, c - a)
    with np.errstate(invalid="ignore"):
        normals = n / np.linalg.norm(n, axis=1, keepdims=True)
    pix = np.repeat(np.column_stack([uq, vq]), 2, axis=0)
    half = np.tile(np.array([0, 1], np.int8), len(vq))
    return VasMesh(P, faces, centroids, normals, pix.astype(np.int64), half)


def receiver_probes(mesh: VasMesh) -> list[ReceiverProbe]:
    return [
        ReceiverProbe(mesh.centroids[i], i, (int(mesh.pixel_of_face[i, 0]), int(mesh.pixel_of_face[i, 1])))
        for i in range(mesh.num_faces)
    ]
