import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from synthrm.render import CameraModel, encode_depth, render_view, sample_trajectory
from synthrm.scenegen import Scene, SemanticClass
from synthrm.vas import lift_pixel


def _scene(tris, sem=SemanticClass.BUILDING_WALL):
    tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    k = len(tris)
    return Scene(tris, n, np.zeros(k, int), np.full(k, int(sem)), np.arange(k),
                 bounds=[tris.reshape(-1, 3).min(0), tris.reshape(-1, 3).max(0)])


def _identity_cam(w=32, h=24, f=20.0):
    return CameraModel(f, f, (w - 1) / 2, (h - 1) / 2, w, h, np.eye(3), np.zeros(3))


def _quad(p00, p10, p11, p01):
    return [[p00, p10, p11], [p00, p11, p01]]


def test_fronto_parallel_wall_depth_exact():
    s = 1000.0
    sc = _scene(_quad([-s, -s, 10], [s, -s, 10], [s, s, 10], [-s, s, 10]))
    buf = render_view(sc, _identity_cam())
    assert np.all(buf.depth == 10.0)
    assert np.all(buf.semantic == SemanticClass.BUILDING_WALL)


def test_sky_pixels():
    sc = _scene(_quad([-1, -1, 10], [1, -1, 10], [1, 1, 10], [-1, 1, 10]))
    buf = render_view(sc, _identity_cam())
    assert np.isnan(buf.depth[0, 0]) and buf.semantic[0, 0] == SemanticClass.SKY and buf.triangle_id[0, 0] == -1
    assert buf.depth[12, 16] == pytest.approx(10.0)


def test_slanted_plane_matches_ray_intersection():
    # z = 5 + 0.1 x  in camera frame
    s = 200.0
    pts = [[x, y, 5 + 0.1 * x] for x, y in ((-s, -s), (s, -s), (s, s), (-s, s))]
    sc = _scene(_quad(*pts))
    cam = _identity_cam()
    buf = render_view(sc, cam)
    vv, uu = np.mgrid[0:cam.height, 0:cam.width]
    rx = (uu - cam.cx) / cam.fx
    expected = 5.0 / (1.0 - 0.1 * rx)
    assert np.allclose(buf.depth, expected, rtol=1e-6)


def test_nearer_triangle_wins():
    s = 100.0
    far = _quad([-s, -s, 20], [s, -s, 20], [s, s, 20], [-s, s, 20])
    near = _quad([-s, -s, 8], [s, -s, 8], [s, s, 8], [-s, s, 8])
    buf = render_view(_scene(far + near), _identity_cam())
    assert np.all(buf.depth == 8.0) and np.all(buf.triangle_id >= 2)


def test_deterministic(downtown):
    cam = sample_trajectory(downtown, "OrbitUAV", 1, 0, 64, 48)[0]
    a, b = render_view(downtown, cam), render_view(downtown, cam)
    for name in ("depth", "semantic", "color", "triangle_id", "normal"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=name in ("depth",))


def test_orbit_poses(downtown):
    cams = sample_trajectory(downtown, "OrbitUAV", 8, 1)
    assert len(cams) == 8
    for c in cams:
        assert np.abs(c.R.T @ c.R - np.eye(3)).max() < 1e-9
        u, v, z = c.project(downtown.center[None]).T
        assert z[0] > 0
        assert abs(u[0] - c.cx) <= 0.05 * c.width and abs(v[0] - c.cy) <= 0.05 * c.height


def test_street_poses(downtown):
    cams = sample_trajectory(downtown, "StreetVehicle", 5, 2)
    assert all(c.center[2] == pytest.approx(1.6, abs=1e-9) for c in cams)


def test_camera_dict_round_trip():
    c = CameraModel.look_at([10, 20, 30], [0, 0, 0], 40, 30, 70.0)
    d = CameraModel.from_dict(c.to_dict())
    assert np.array_equal(d.K, c.K) and np.array_equal(d.R, c.R) and np.array_equal(d.t, c.t)


def test_invalid_camera():
    with pytest.raises(ValueError):
        CameraModel(10, 10, 5, 5, 10, 10, np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        CameraModel(-1, 10, 5, 5, 10, 10, np.eye(3), np.zeros(3))


def test_log_depth_encoding():
    d = np.array([[1.0, 100.0, np.nan]], np.float32)
    out = encode_depth(d, log=True)
    assert out[0, 0] == 0 and out[0, 1] == 2 and np.isnan(out[0, 2])
    assert encode_depth(d) is not None and np.array_equal(encode_depth(d), d, equal_nan=True)


def test_edge_on_triangle_not_rasterized():
    sc = _scene([[[0, -1, 5], [0, 1, 5], [0, 0, 50]]])
    buf = render_view(sc, _identity_cam())
    assert np.all(buf.triangle_id == -1)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 400))
def test_project_lift_round_trip(u_off, v_off, depth):
    cam = CameraModel.look_at([30, -40, 25], [0, 0, 0], 64, 48, 55.0)
    u, v = cam.cx + u_off * 10, cam.cy + v_off * 7
    p = lift_pixel(u, v, depth, cam)
    uu, vv, zz = cam.project(p[None])[0]
    assert math.isclose(uu, u, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(vv, v, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(zz, depth, rel_tol=1e-9)


def test_rendered_pixels_reproject(downtown):
    cam = sample_trajectory(downtown, "OrbitUAV", 1, 5, 48, 48)[0]
    buf = render_view(downtown, cam)
    vs, us = np.nonzero(np.isfinite(buf.depth))
    for v, u in list(zip(vs, us))[::37]:
        p = lift_pixel(u, v, float(buf.depth[v, u]), cam)
        uu, vv, _ = cam.project(p[None])[0]
        assert abs(uu - u) < 0.5 and abs(vv - v) < 0.5
