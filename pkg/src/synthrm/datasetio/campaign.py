"""Per-sample export, the campaign driver and the dataset validator.

Layout under ``output_dir``::

    manifest.json
    scene_000/
        scene.obj  materials.json  footprints.json  cameras.json  sensing_graph.json
        community_00/v000_t00/
            rgb.ppm depth.pfm normal.pfm albedo.pfm roughness.pfm semantic.pgm
            path_gain.pfm sinr.pfm vas.ply camera.json tx.json

Without orchestration the ``community_XX`` level is omitted. All paths stored
in JSON are relative to ``output_dir``; no timestamps or host data are written.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from ..orchestrate import build_sensing_graph, detect_communities
from ..radio import RadioConfig, Tracer, compute_radio_map
from ..radio.radiomap import RadioMap
from ..render import CameraModel, TrajectoryKind, ViewBuffers, render_view, sample_trajectory
from ..scenegen import BlockSpec, Scene, generate_city, sample_tx_positions
from ..vas import VasMesh, reconstruct_vas
from .formats import (read_pfm, read_pgm, read_ply, read_ppm, write_pfm, write_pgm, write_ply, write_ppm,
                      write_scene)
from .seeds import child_seed

log = logging.getLogger(__name__)

RASTERS = ("rgb", "depth", "normal", "albedo", "roughness", "semantic", "path_gain", "sinr")
STAGES = {
    "generate": {"generate"},
    "render": {"generate", "render"},
    "orchestrate": {"generate", "render", "orchestrate"},
    "simulate": {"generate", "render", "simulate"},
    "campaign": {"generate", "render", "orchestrate", "simulate"},
}
TX_PLACEMENTS = ("free", "visible", "occluded", "mixed")
TX_CANDIDATES = 512


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.ORBIT_UAV
    count: int = 4
    width: int = 128
    height: int = 128
    fov_deg: float = 60.0
    orbit_radius: float | None = None
    orbit_altitude: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TrajectoryKind(self.kind))
        if self.count < 1 or self.width < 2 or self.height < 2:
            raise ConfigError("trajectory needs count >= 1 and an image of at least 2 x 2")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "count": self.count, "width": self.width, "height": self.height,
                "fov_deg": self.fov_deg, "orbit_radius": self.orbit_radius, "orbit_altitude": self.orbit_altitude}


@dataclass(frozen=True)
class CampaignConfig:
    scenes: tuple
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    tx_per_view: int = 1
    radio: RadioConfig = field(default_factory=RadioConfig)
    output_dir: str = "dataset"
    seed: int = 0
    tx_placement: str = "free"
    tx_clearance: float = 1.0
    community_resolution: float = 1.0

    def __post_init__(self):
        if not self.scenes:
            raise ConfigError("at least one scene spec is required")
        if self.tx_per_view < 1:
            raise ConfigError("tx_per_view must be >= 1")
        if self.tx_placement not in TX_PLACEMENTS:
            raise ConfigError(f"tx_placement must be one of {TX_PLACEMENTS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        try:
            d = dict(d)
            scenes = tuple(_scene_template(s) for s in d.pop("scenes"))
            traj = TrajectorySpec(**d.pop("trajectory", {}))
            radio = RadioConfig.from_dict(d.pop("radio", {}))
            return cls(scenes=scenes, trajectory=traj, radio=radio, **d)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid campaign config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "scenes": [dict(s) for s in self.scenes],
            "trajectory": self.trajectory.to_dict(),
            "tx_per_view": self.tx_per_view,
            "radio": self.radio.to_dict(),
            "seed": int(self.seed),
            "tx_placement": self.tx_placement,
            "tx_clearance": self.tx_clearance,
            "community_resolution": self.community_resolution,
        }

    def scene_spec(self, index: int) -> BlockSpec:
        seed = child_seed(self.seed, index)
        tpl = dict(self.scenes[index])
        arch = tpl.pop("archetype")
        extent = tpl.pop("grid_extent", 240.0)
        return BlockSpec.for_archetype(arch, extent, seed, **tpl)


def _scene_template(s) -> dict:
    """Scene entries are BlockSpec fields minus the seed, which the campaign derives."""
    if isinstance(s, str):
        s = {"archetype": s}
    s = {k: v for k, v in dict(s).items() if k != "seed"}
    if "archetype" not in s:
        raise ConfigError("scene entry needs an archetype")
    BlockSpec.for_archetype(s["archetype"], s.get("grid_extent", 240.0), 0,
                            **{k: v for k, v in s.items() if k not in ("archetype", "grid_extent")})
    if "building_height_range" in s:
        s["building_height_range"] = list(s["building_height_range"])
    return s


@dataclass
class SampleRecord:
    sample_id: str
    scene_index: int
    view_index: int
    tx_index: int
    archetype: str
    seed: int
    camera: dict
    tx: dict
    files: dict
    num_faces: int
    community: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "scene": self.scene_index,
            "view": self.view_index,
            "tx_index": self.tx_index,
            "archetype": self.archetype,
            "seed": self.seed,
            "camera": self.camera,
            "tx": self.tx,
            "files": self.files,
            "num_faces": self.num_faces,
            "community": self.community,
        }


class Manifest:
    """Thread-safe appender; ``write`` sorts entries so output order is scheduling-independent."""

    def __init__(self, campaign: dict | None = None):
        self.campaign = campaign or {}
        self.samples: list[dict] = []
        self.errors: list[dict] = []
        self._lock = threading.Lock()

    def append(self, record: SampleRecord) -> None:
        with self._lock:
            self.samples.append(record.to_dict())

    def error(self, sample_id: str, message: str) -> None:
        with self._lock:
            self.errors.append({"id": sample_id, "error": message})

    def to_dict(self) -> dict:
        return {
            "campaign": self.campaign,
            "num_samples": len(self.samples),
            "samples": sorted(self.samples, key=lambda s: s["id"]),
            "errors": sorted(self.errors, key=lambda e: e["id"]),
        }

    def write(self, path) -> None:
        _dump_json(path, self.to_dict())


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _view_files(buffers: ViewBuffers, directory: str) -> dict:
    write_ppm(os.path.join(directory, "rgb.ppm"), buffers.color)
    write_pfm(os.path.join(directory, "depth.pfm"), buffers.depth)
    write_pfm(os.path.join(directory, "normal.pfm"), buffers.normal)
    write_pfm(os.path.join(directory, "albedo.pfm"), buffers.albedo)
    write_pfm(os.path.join(directory, "roughness.pfm"), buffers.roughness)
    write_pgm(os.path.join(directory, "semantic.pgm"), buffers.semantic)
    return {"rgb": "rgb.ppm", "depth": "depth.pfm", "normal": "normal.pfm", "albedo": "albedo.pfm",
            "roughness": "roughness.pfm", "semantic": "semantic.pgm"}


def export_sample(root: str, relative_dir: str, sample_id: str, camera: CameraModel, buffers: ViewBuffers,
                  vas: VasMesh, radio_map: RadioMap, tx, config: RadioConfig, *, scene_index: int = 0,
                  view_index: int = 0, tx_index: int = 0, archetype: str = "", seed: int = 0,
                  community: int | None = None, manifest: Manifest | None = None) -> SampleRecord:
    """Write one sample's files under ``root/relative_dir`` and append it to ``manifest``."""
    shapes = {buffers.depth.shape, buffers.semantic.shape, buffers.albedo.shape, radio_map.path_gain_db.shape,
              radio_map.sinr_db.shape, (camera.height, camera.width)}
    if len(shapes) != 1:
        raise ValueError(f"buffer dimensions disagree: {sorted(shapes)}")
    directory = os.path.join(root, relative_dir)
    os.makedirs(directory, exist_ok=True)
    try:
        files = _view_files(buffers, directory)
        write_pfm(os.path.join(directory, "path_gain.pfm"), radio_map.path_gain_db)
        write_pfm(os.path.join(directory, "sinr.pfm"), radio_map.sinr_db)
        write_ply(os.path.join(directory, "vas.ply"), vas.flat_vertices, vas.faces, radio_map.per_face_gain_db)
        files.update(path_gain="path_gain.pfm", sinr="sinr.pfm", vas="vas.ply", camera="camera.json", tx="tx.json")
        tx_info = {
            "position": [float(x) for x in tx],
            "antenna": config.antenna.to_dict(),
            "tx_power_dbm": config.tx_power,
            "frequency_hz": config.frequency,
        }
        _dump_json(os.path.join(directory, "camera.json"), camera.to_dict())
        _dump_json(os.path.join(directory, "tx.json"), tx_info)
    except OSError as exc:
        if manifest is not None:
            manifest.error(sample_id, f"I/O failure: {exc}")
        raise
    record = SampleRecord(
        sample_id=sample_id, scene_index=scene_index, view_index=view_index, tx_index=tx_index,
        archetype=archetype, seed=int(seed), camera=camera.to_dict(), tx=tx_info,
        files={k: f"{relative_dir}/{v}" for k, v in files.items()}, num_faces=vas.num_faces, community=community,
    )
    if manifest is not None:
        manifest.append(record)
    return record


def place_transmitters(scene: Scene, camera: CameraModel, tracer: Tracer, count: int, seed: int, placement: str,
                       clearance: float, first_index: int = 0) -> list[np.ndarray]:
    """Transmitters for one view.

    ``visible``: inside the image and in line of sight of the camera center;
    ``occluded``: the opposite; ``mixed`` alternates visible/occluded by
    global sample index; ``free`` takes candidates as drawn.
    """
    cands = sample_tx_positions(scene, TX_CANDIDATES if placement != "free" else count, seed, clearance=clearance)
    if placement == "free":
        return list(cands)
    uvz = camera.project(cands)
    eye = camera.center
    inside = (uvz[:, 2] > 0) & (uvz[:, 0] >= 0) & (uvz[:, 0] <= camera.width - 1) \
        & (uvz[:, 1] >= 0) & (uvz[:, 1] <= camera.height - 1)
    out = []
    used = set()
    for t in range(count):
        want_visible = placement == "visible" or (placement == "mixed" and (first_index + t) % 2 == 0)
        for i, c in enumerate(cands):
            if i in used:
                continue
            vis = bool(inside[i]) and tracer.line_of_sight(eye, c)
            if vis == want_visible:
                out.append(c)
                used.add(i)
                break
        else:
            kind = "visible" if want_visible else "occluded"
            raise RuntimeError(f"no {kind} transmitter among {len(cands)} candidates")
    return out


@dataclass
class CampaignResult:
    root: str
    manifest: Manifest
    exit_code: int

    @property
    def num_samples(self) -> int:
        return len(self.manifest.samples)


def run_campaign(config: CampaignConfig, stage: str = "campaign", output_dir: str | None = None) -> CampaignResult:
    """Run the pipeline up to ``stage``; see :data:`STAGES`."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    steps = STAGES[stage]
    root = output_dir or config.output_dir
    os.makedirs(root, exist_ok=True)
    manifest = Manifest(config.to_dict())
    traj = config.trajectory
    for si in range(len(config.scenes)):
        spec = config.scene_spec(si)
        scene_seed = int(spec.seed)
        scene_dir = f"scene_{si:03d}"
        scene = generate_city(spec)
        write_scene(scene, os.path.join(root, scene_dir))
        _dump_json(os.path.join(root, scene_dir, "block_spec.json"), spec.to_dict())
        if "render" not in steps:
            continue
        try:
            cams = sample_trajectory(scene, traj.kind, traj.count, child_seed(scene_seed, 1), traj.width, traj.height,
                                     traj.fov_deg, traj.orbit_radius, traj.orbit_altitude)
        except ValueError as exc:
            for vi in range(traj.count):
                for ti in range(config.tx_per_view):
                    manifest.error(f"s{si:03d}_v{vi:03d}_t{ti:02d}", str(exc))
            continue
        _dump_json(os.path.join(root, scene_dir, "cameras.json"), [c.to_dict() for c in cams])
        views = [(cam, render_view(scene, cam)) for cam in cams]
        communities = None
        if "orchestrate" in steps:
            graph = build_sensing_graph(views, scene, pose_ids=[f"v{vi:03d}" for vi in range(len(cams))])
            communities = detect_communities(graph, config.community_resolution)
            graph.write(os.path.join(root, scene_dir, "sensing_graph.json"))
        if "simulate" not in steps:
            for vi, (cam, buf) in enumerate(views):
                rel = f"{scene_dir}/v{vi:03d}"
                os.makedirs(os.path.join(root, rel), exist_ok=True)
                _view_files(buf, os.path.join(root, rel))
                _dump_json(os.path.join(root, rel, "camera.json"), cam.to_dict())
            continue
        tracer = Tracer(scene, config.radio)
        for vi, (cam, buf) in enumerate(views):
            vas = reconstruct_vas(buf.depth, cam)
            view_seed = child_seed(child_seed(scene_seed, 2), vi)
            try:
                txs = place_transmitters(scene, cam, tracer, config.tx_per_view, view_seed, config.tx_placement,
                                         config.tx_clearance, first_index=vi * config.tx_per_view)
            except Exception as exc:  # recorded, the campaign goes on
                for ti in range(config.tx_per_view):
                    manifest.error(f"s{si:03d}_v{vi:03d}_t{ti:02d}", f"transmitter placement: {exc}")
                continue
            for ti, tx in enumerate(txs):
                sid = f"s{si:03d}_v{vi:03d}_t{ti:02d}"
                group = f"community_{communities[vi]:02d}/" if communities is not None else ""
                rel = f"{scene_dir}/{group}v{vi:03d}_t{ti:02d}"
                try:
                    rm = compute_radio_map(scene, tx, cam, vas, config.radio, tracer=tracer)
                    export_sample(root, rel, sid, cam, buf, vas, rm, tx, config.radio, scene_index=si,
                                  view_index=vi, tx_index=ti, archetype=spec.archetype.value,
                                  seed=child_seed(view_seed, ti),
                                  community=None if communities is None else int(communities[vi]),
                                  manifest=manifest)
                except Exception as exc:
                    log.warning("sample %s failed: %s", sid, exc)
                    if not any(e["id"] == sid for e in manifest.errors):
                        manifest.error(sid, str(exc))
    manifest.write(os.path.join(root, "manifest.json"))
    return CampaignResult(root, manifest, 2 if manifest.errors else 0)


def validate_dataset(root) -> list[str]:
    """Walk ``manifest.json`` and re-check every per-file invariant; returns problems found."""
    problems = []
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("num_samples") != len(manifest.get("samples", [])):
        problems.append("num_samples disagrees with the sample list")
    for s in manifest["samples"]:
        sid = s["id"]
        files = s["files"]
        for name, rel in files.items():
            if os.path.isabs(rel) or ".." in rel.split("/"):
                problems.append(f"{sid}: non-relative path {rel}")
            if not os.path.exists(os.path.join(root, rel)):
                problems.append(f"{sid}: missing {rel}")
        try:
            path = lambda k: os.path.join(root, files[k])  # noqa: E731
            arrays = {
                "rgb": read_ppm(path("rgb")), "depth": read_pfm(path("depth")), "normal": read_pfm(path("normal")),
                "albedo": read_pfm(path("albedo")), "roughness": read_pfm(path("roughness")),
                "semantic": read_pgm(path("semantic")), "path_gain": read_pfm(path("path_gain")),
                "sinr": read_pfm(path("sinr")),
            }
            dims = {a.shape[:2] for a in arrays.values()}
            cam = CameraModel.from_dict(_load(path("camera")))
            if dims != {(cam.height, cam.width)}:
                problems.append(f"{sid}: raster dimensions {sorted(dims)} disagree with camera")
            pg, depth = arrays["path_gain"], arrays["depth"]
            if np.any(np.isfinite(pg) & ~np.isfinite(depth)):
                problems.append(f"{sid}: finite path gain on a pixel without depth")
            if np.any(np.isfinite(pg) & (pg > 0)):
                problems.append(f"{sid}: path gain above 0 dB")
            verts, faces, _ = read_ply(path("vas"))
            if len(faces) != s["num_faces"]:
                problems.append(f"{sid}: PLY has {len(faces)} faces, manifest says {s['num_faces']}")
            if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
                problems.append(f"{sid}: PLY face index out of range")
            if np.abs(cam.R.T @ cam.R - np.eye(3)).max() >= 1e-9:
                problems.append(f"{sid}: camera R not orthonormal")
        except Exception as exc:
            problems.append(f"{sid}: {type(exc).__name__}: {exc}")
    return problems


def _load(path):
    with open(path) as fh:
        return json.load(fh)
