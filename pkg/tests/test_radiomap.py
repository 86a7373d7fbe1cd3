import math

import numpy as np
import pytest

from synthrm.radio import RadioConfig, Tracer, compute_radio_map
from synthrm.radio.radiomap import pixel_mean
from synthrm.render import CameraModel, render_view, sample_trajectory
from synthrm.scenegen import box_scene, sample_tx_positions
from synthrm.vas import reconstruct_vas

LOS_ONLY = RadioConfig(specular_reflection=False, refraction=False, diffraction=False)


def _single_quad(depth=20.0):
    cam = CameraModel(10.0, 10.0, 0.5, 0.5, 2, 2, np.eye(3), [0.0, 0.0, -50.0])
    vas = reconstruct_vas(np.full((2, 2), depth), cam)
    assert vas.num_faces == 2
    return cam, vas


def _equidistant_tx(vas, dist):
    c1, c2 = vas.centroids
    mid = 0.5 * (c1 + c2)
    half = 0.5 * np.linalg.norm(c1 - c2)
    axis = np.cross(c1 - c2, [0.0, 0.0, 1.0])
    axis /= np.linalg.norm(axis)
    return mid + axis * math.sqrt(dist ** 2 - half ** 2)


def test_friis_and_sinr_at_100m():
    sc = box_scene(1000.0)
    cam, vas = _single_quad()
    tx = _equidistant_tx(vas, 100.0)
    rm = compute_radio_map(sc, tx, cam, vas, LOS_ONLY)
    assert rm.path_gain_db[0, 0] == pytest.approx(-83.33, abs=0.01)
    assert rm.sinr_db[0, 0] == pytest.approx(60.60, abs=0.02)
    assert rm.sinr_db[0, 0] == pytest.approx(30.0 + rm.path_gain_db[0, 0] - LOS_ONLY.noise_dbm, abs=1e-9)
    # pixels without faces
    assert np.isnan(rm.path_gain_db[1, 1]) and np.isnan(rm.sinr_db[0, 1])


def test_no_path_gives_nan():
    sc = box_scene(1000.0, [(200, -30, 260, 30, 200)])
    cam, vas = _single_quad()
    tx = np.array([230.0, 0.0, 100.0])  # inside the closed box
    rm = compute_radio_map(sc, tx, cam, vas, LOS_ONLY)
    assert np.isnan(rm.path_gain_db[0, 0]) and np.isnan(rm.sinr_db[0, 0])
    assert np.all(rm.per_face_gain == 0) and np.all(np.isnan(rm.per_face_gain_db))


def test_interference_lowers_sinr():
    sc = box_scene(1000.0)
    cam, vas = _single_quad()
    tx = _equidistant_tx(vas, 100.0)
    other = _equidistant_tx(vas, 100.0) * np.array([-1.0, -1.0, 1.0])
    rm = compute_radio_map(sc, tx, cam, vas, LOS_ONLY, interferers=[other])
    g_int = Tracer(sc, LOS_ONLY).path_gain(other, vas.centroids).mean()
    denom = 10 ** (LOS_ONLY.noise_dbm / 10) + 10 ** (3.0) * g_int
    assert rm.sinr_db[0, 0] == pytest.approx(30 + rm.path_gain_db[0, 0] - 10 * math.log10(denom), abs=1e-9)


def test_pixel_mean_of_two_faces():
    cam, vas = _single_quad()
    assert pixel_mean(vas, np.array([1.0, 3.0]))[0, 0] == 2.0


def test_finite_gain_implies_finite_depth(downtown):
    cam = sample_trajectory(downtown, "OrbitUAV", 1, 3, 48, 48)[0]
    buf = render_view(downtown, cam)
    vas = reconstruct_vas(buf.depth, cam)
    tx = sample_tx_positions(downtown, 1, 3, clearance=1.0)[0]
    rm = compute_radio_map(downtown, tx, cam, vas, RadioConfig(specular_depth_cap=1))
    fin = np.isfinite(rm.path_gain_db)
    assert fin.any()
    assert np.all(np.isfinite(buf.depth[fin]))
    assert np.nanmax(rm.path_gain_db) <= 0


def test_guards(downtown):
    cam, vas = _single_quad()
    other = box_scene(10.0)
    with pytest.raises(ValueError):
        compute_radio_map(downtown, [0, 0, 1.6], cam, vas, LOS_ONLY, tracer=Tracer(other, LOS_ONLY))
    big = CameraModel(10.0, 10.0, 1.0, 1.0, 3, 3, np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        compute_radio_map(downtown, [0, 0, 1.6], big, vas, LOS_ONLY)
