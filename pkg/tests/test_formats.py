import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from synthrm.datasetio import (
    FormatError,
    child_seed,
    read_pfm,
    read_pgm,
    read_ply,
    read_ppm,
    read_raster,
    read_scene,
    splitmix64,
    write_pfm,
    write_pgm,
    write_ply,
    write_ppm,
    write_raster,
    write_scene,
)
from synthrm.scenegen import BlockSpec, generate_city


def test_pfm_round_trip_bits(tmp_path):
    a = np.array([[1.0, -83.33], [np.nan, 0.0]], np.float32)
    write_raster(tmp_path / "a.pfm", a)
    b = read_raster(tmp_path / "a.pfm")
    assert b.dtype == np.float32 and a.tobytes() == b.tobytes()


def test_pfm_header(tmp_path):
    write_pfm(tmp_path / "h.pfm", np.zeros((480, 640), np.float32))
    raw = (tmp_path / "h.pfm").read_bytes()
    assert raw.startswith(b"Pf\n640 480\n-1.0\n")
    assert len(raw) == len(b"Pf\n640 480\n-1.0\n") + 640 * 480 * 4


def test_pfm_rows_bottom_to_top(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    write_pfm(tmp_path / "r.pfm", a)
    payload = (tmp_path / "r.pfm").read_bytes()[-16:]
    assert struct.unpack("<4f", payload) == (3.0, 4.0, 1.0, 2.0)


def test_pfm_big_endian_fixture(tmp_path):
    # 3 x 2 image, rows stored bottom-up, big-endian floats
    rows_top_down = [[1.5, -2.0, 3.25], [np.nan, 0.0, -83.33]]
    payload = b"".join(struct.pack(">3f", *r) for r in reversed(rows_top_down))
    (tmp_path / "be.pfm").write_bytes(b"Pf\n3 2\n1.0\n" + payload)
    got = read_pfm(tmp_path / "be.pfm")
    assert np.array_equal(got, np.array(rows_top_down, np.float32), equal_nan=True)


def test_pfm_color(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 4, 3)
    write_pfm(tmp_path / "c.pfm", a)
    assert (tmp_path / "c.pfm").read_bytes().startswith(b"PF\n4 2\n")
    assert np.array_equal(read_pfm(tmp_path / "c.pfm"), a)


@pytest.mark.parametrize("data", [
    b"P6\n2 2\n-1.0\n" + b"\0" * 16,
    b"Pf\n2 2\n0.0\n" + b"\0" * 16,
    b"Pf\n2 2\n-1.0\n" + b"\0" * 15,
    b"Pf\ntwo 2\n-1.0\n",
    b"Pf\n2",
])
def test_pfm_malformed(tmp_path, data):
    (tmp_path / "bad.pfm").write_bytes(data)
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "bad.pfm")


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(width=32, allow_infinity=False)))
def test_pfm_round_trip_property(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    write_pfm(p, a)
    assert read_pfm(p).tobytes() == a.tobytes()


def test_ppm_pgm(tmp_path):
    rgb = np.random.default_rng(0).random((5, 7, 3)).astype(np.float32)
    write_ppm(tmp_path / "a.ppm", rgb)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == (5, 7, 3) and back.dtype == np.uint8
    assert np.array_equal(back, np.round(rgb * 255).astype(np.uint8))
    sem = np.array([[0, 1, 255], [2, 3, 0]], np.uint8)
    write_pgm(tmp_path / "s.pgm", sem)
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "s.pgm"), sem)


def test_ply(tmp_path):
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [9, 9, 9], [1, 1, 0]], float)
    faces = np.array([[0, 1, 2], [1, 4, 2]])
    write_ply(tmp_path / "m.ply", verts, faces, np.array([-80.5, np.nan]))
    head = (tmp_path / "m.ply").read_bytes().split(b"end_header\n")[0].decode()
    assert "format binary_little_endian 1.0" in head and "property float path_gain_db" in head
    v, f, g = read_ply(tmp_path / "m.ply")
    assert len(v) == 4  # unreferenced vertex dropped
    assert np.array_equal(v[f], verts[faces])
    assert g[0] == np.float32(-80.5) and np.isnan(g[1])


def test_scene_round_trip(tmp_path):
    sc = generate_city(BlockSpec.for_archetype("Mix", 120.0, seed=4))
    write_scene(sc, tmp_path)
    obj = (tmp_path / "scene.obj").read_text()
    assert "g BUILDING_WALL" in obj and "g ROAD" in obj
    mats = json.loads((tmp_path / "materials.json").read_text())
    assert {m["name"] for m in mats.values()} == {"concrete", "very_dry_ground"}
    back = read_scene(tmp_path)
    assert np.array_equal(back.vertices, sc.vertices)
    assert np.array_equal(back.semantic, sc.semantic) and np.array_equal(back.material_ids, sc.material_ids)
    assert np.array_equal(back.heights, sc.heights)
    assert all(np.array_equal(a, b) for a, b in zip(back.footprints, sc.footprints))


def test_splitmix_reference_values():
    # published first outputs of the splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_child_seeds_distinct():
    seeds = {child_seed(42, i) for i in range(10_000)}
    assert len(seeds) == 10_000
    assert child_seed(42, 3) == child_seed(42, 3) != child_seed(43, 3)
    assert all(0 <= s < 2**64 for s in seeds)
