"""Language-neutral file formats: PFM, PPM/PGM, binary PLY and scene OBJ + JSON sidecars."""
from __future__ import annotations

import json
import os

import numpy as np

from ..scenegen import Material, Scene, SemanticClass


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------- PFM

def write_pfm(path, values) -> None:
    """Grayscale ``Pf`` (H x W) or color ``PF`` (H x W x 3), little-endian float32, rows bottom-to-top."""
    a = np.asarray(values)
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"cannot store array of shape {a.shape} as PFM")
    a = a.astype("<f4", copy=False)
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def _read_header_lines(buf: bytes, count: int) -> tuple[list[bytes], int]:
    lines, pos = [], 0
    for _ in range(count):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated header")
        lines.append(buf[pos:end].strip())
        pos = end + 1
    return lines, pos


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, dims, scale_s), pos = _read_header_lines(buf, 3)
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise FormatError(f"bad PFM magic {magic!r}")
    try:
        w, h = (int(x) for x in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}") from None
    if w <= 0 or h <= 0:
        raise FormatError("non-positive PFM dimensions")
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"unsupported PFM scale {scale_s!r}")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(buf) - pos < 4 * n:
        raise FormatError("truncated PFM payload")
    data = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].copy()


write_raster = write_pfm
read_raster = read_pfm


# ----------------------------------------------------------------------- PPM/PGM

def write_ppm(path, rgb) -> None:
    """8-bit binary P6 from floats in [0, 1] (or uint8)."""
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("PPM needs an H x W x 3 array")
    if a.dtype != np.uint8:
        a = np.round(np.clip(np.nan_to_num(a), 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(a).tobytes())


def write_pgm(path, gray) -> None:
    a = np.asarray(gray)
    if a.ndim != 2 or a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ValueError("PGM needs an H x W array of values in [0, 255]")
    a = a.astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(a).tobytes())


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != magic:
        raise FormatError(f"expected {magic!r}, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError("only 8-bit maps are supported")
    n = w * h * channels
    if len(buf) - pos < n:
        raise FormatError("truncated payload")
    a = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return a.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


# --------------------------------------------------------------------------- PLY

_FACE_DTYPE = np.dtype([("n", "u1"), ("idx", "<i4", (3,)), ("path_gain_db", "<f4")])


def write_ply(path, vertices, faces, path_gain_db=None) -> None:
    """Binary little-endian PLY; unreferenced vertices are dropped and indices remapped."""
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    used, inverse = np.unique(F, return_inverse=True)
    verts = V[used]
    rec = np.zeros(len(F), dtype=_FACE_DTYPE)
    rec["n"] = 3
    rec["idx"] = inverse.reshape(-1, 3)
    rec["path_gain_db"] = np.nan if path_gain_db is None else np.asarray(path_gain_db, dtype=np.float32)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(verts)}\nproperty double x\nproperty double y\nproperty double z\n"
        f"element face {len(F)}\nproperty list uchar int vertex_indices\nproperty float path_gain_db\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(verts.astype("<f8").tobytes())
        fh.write(rec.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (vertices, faces, path_gain_db) for files written by :func:`write_ply`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file")
    header = buf[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError("only binary little-endian PLY is supported")
    counts = {}
    for line in header:
        parts = line.split()
        if parts[:1] == ["element"]:
            counts[parts[1]] = int(parts[2])
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    pos = end + len(b"end_header\n")
    need = 24 * nv + _FACE_DTYPE.itemsize * nf
    if len(buf) - pos < need:
        raise FormatError("truncated PLY payload")
    verts = np.frombuffer(buf, dtype="<f8", count=3 * nv, offset=pos).reshape(nv, 3).copy()
    rec = np.frombuffer(buf, dtype=_FACE_DTYPE, count=nf, offset=pos + 24 * nv)
    if nf and np.any(rec["n"] != 3):
        raise FormatError("non-triangular face")
    return verts, rec["idx"].astype(np.int64), rec["path_gain_db"].astype(np.float32)


# ---------------------------------------------------------------- scene OBJ/JSON

def _g(x: float) -> str:
    return repr(float(x))


def write_scene(scene: Scene, directory) -> dict[str, str]:
    """Write ``scene.obj``, ``materials.json`` and ``footprints.json``; returns the file names."""
    os.makedirs(directory, exist_ok=True)
    lines = ["# synthrm scene; material coefficients in materials.json"]
    for tri in scene.vertices:
        for p in tri:
            lines.append("v " + " ".join(_g(c) for c in p))
    for n in scene.normals:
        lines.append("vn " + " ".join(_g(c) for c in n))
    current = None
    for i in range(scene.num_triangles):
        key = (int(scene.semantic[i]), int(scene.facet_ids[i]), int(scene.material_ids[i]))
        if key != current:
            cls_name = SemanticClass(key[0]).name
            lines.append(f"g {cls_name} facet_{key[1]}")
            lines.append(f"usemtl {scene.materials[key[2]].name}")
            current = key
        a = 3 * i + 1
        lines.append(f"f {a}//{i + 1} {a + 1}//{i + 1} {a + 2}//{i + 1}")
    with open(os.path.join(directory, "scene.obj"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    materials = {
        str(k): {
            "name": m.name,
            "permittivity_coeffs": list(m.permittivity_coeffs),
            "conductivity_coeffs": list(m.conductivity_coeffs),
            "albedo": m.albedo,
            "roughness": m.roughness,
        }
        for k, m in enumerate(scene.materials)
    }
    _dump_json(os.path.join(directory, "materials.json"), materials)
    meta = {
        "footprints": [{"polygon": fp.tolist(), "height": float(h)} for fp, h in zip(scene.footprints, scene.heights)],
        "streets": scene.streets.tolist(),
        "bounds": scene.bounds.tolist(),
        "datum_z": float(scene.datum_z),
    }
    _dump_json(os.path.join(directory, "footprints.json"), meta)
    return {"obj": "scene.obj", "materials": "materials.json", "footprints": "footprints.json"}


def read_scene(directory) -> Scene:
    with open(os.path.join(directory, "materials.json")) as fh:
        mats = json.load(fh)
    materials = tuple(
        Material(m["name"], tuple(m["permittivity_coeffs"]), tuple(m["conductivity_coeffs"]), m["albedo"], m["roughness"])
        for _, m in sorted(mats.items(), key=lambda kv: int(kv[0]))
    )
    mat_id = {m.name: k for k, m in enumerate(materials)}
    verts, normals, tris, sem, fac, mid = [], [], [], [], [], []
    cur_sem = cur_fac = cur_mat = None
    with open(os.path.join(directory, "scene.obj")) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "g":
                cur_sem = SemanticClass[parts[1]].value
                cur_fac = int(parts[2].split("_")[1])
            elif parts[0] == "usemtl":
                cur_mat = mat_id[parts[1]]
            elif parts[0] == "f":
                idx = [p.split("/") for p in parts[1:4]]
                tris.append([int(v) - 1 for v, _, _ in idx])
                normals_idx = int(idx[0][2]) - 1
                sem.append(cur_sem)
                fac.append(cur_fac)
                mid.append(cur_mat)
                tris[-1].append(normals_idx)
    verts = np.array(verts).reshape(-1, 3)
    normals = np.array(normals).reshape(-1, 3)
    T = np.array(tris, dtype=np.int64).reshape(-1, 4)
    with open(os.path.join(directory, "footprints.json")) as fh:
        meta = json.load(fh)
    return Scene(
        vertices=verts[T[:, :3]],
        normals=normals[T[:, 3]],
        material_ids=np.array(mid),
        semantic=np.array(sem),
        facet_ids=np.array(fac),
        footprints=tuple(np.array(f["polygon"]) for f in meta["footprints"]),
        heights=np.array([f["height"] for f in meta["footprints"]]),
        streets=np.array(meta["streets"]).reshape(-1, 4),
        bounds=np.array(meta["bounds"]),
        datum_z=meta["datum_z"],
        materials=materials,
    )


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "FormatError", "write_pfm", "read_pfm", "write_raster", "read_raster", "write_ppm", "read_ppm",
    "write_pgm", "read_pgm", "write_ply", "read_ply", "write_scene", "read_scene",
]
