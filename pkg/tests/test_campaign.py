import json
import os

import numpy as np
import pytest

from synthrm.cli import main
from synthrm.datasetio import (
    CampaignConfig,
    ConfigError,
    Manifest,
    export_sample,
    read_pfm,
    read_ply,
    run_campaign,
    validate_dataset,
    write_pfm,
)
from synthrm.radio import RadioConfig, Tracer, compute_radio_map
from synthrm.render import CameraModel, render_view, sample_trajectory
from synthrm.scenegen import sample_tx_positions
from synthrm.vas import reconstruct_vas

SMALL = {
    "seed": 5,
    "scenes": [{"archetype": "Margin", "grid_extent": 90}],
    "trajectory": {"kind": "OrbitUAV", "count": 2, "width": 24, "height": 24},
    "tx_per_view": 2,
    "radio": {"specular_depth_cap": 1},
}


def _tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def sample_dir(tmp_path_factory, margin):
    root = tmp_path_factory.mktemp("export")
    cam = sample_trajectory(margin, "OrbitUAV", 1, 0, 32, 24)[0]
    buf = render_view(margin, cam)
    vas = reconstruct_vas(buf.depth, cam)
    tx = sample_tx_positions(margin, 1, 0, clearance=1.0)[0]
    cfg = RadioConfig(specular_depth_cap=1)
    rm = compute_radio_map(margin, tx, cam, vas, cfg)
    man = Manifest()
    rec = export_sample(str(root), "scene_000/v000_t00", "s000_v000_t00", cam, buf, vas, rm, tx, cfg, manifest=man)
    man.write(root / "manifest.json")
    return root, rec, vas, rm


def test_export_files_and_invariants(sample_dir):
    root, rec, vas, rm = sample_dir
    for rel in rec.files.values():
        assert (root / rel).exists()
    assert validate_dataset(root) == []
    cam = CameraModel.from_dict(json.loads((root / rec.files["camera"]).read_text()))
    assert np.abs(cam.R.T @ cam.R - np.eye(3)).max() < 1e-9
    _, faces, pg = read_ply(root / rec.files["vas"])
    assert len(faces) == vas.num_faces
    assert np.array_equal(pg, rm.per_face_gain_db.astype(np.float32), equal_nan=True)
    assert np.array_equal(read_pfm(root / rec.files["path_gain"]), rm.path_gain_db.astype(np.float32),
                          equal_nan=True)
    tx = json.loads((root / rec.files["tx"]).read_text())
    assert tx["antenna"]["kind"] == "SISO" and len(tx["position"]) == 3


def test_validator_detects_corruption(sample_dir, tmp_path):
    root, rec, _, _ = sample_dir
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    write_pfm(copy / rec.files["path_gain"], np.zeros((3, 3), np.float32))
    problems = validate_dataset(copy)
    assert any("dimensions" in p for p in problems)
    os.remove(copy / rec.files["vas"])
    assert any("missing" in p for p in validate_dataset(copy))


def test_export_dimension_guard(sample_dir, margin, tmp_path):
    _, _, vas, rm = sample_dir
    cam = sample_trajectory(margin, "OrbitUAV", 1, 0, 16, 16)[0]
    with pytest.raises(ValueError):
        export_sample(str(tmp_path), "x", "x", cam, render_view(margin, cam), vas, rm, [0, 0, 1.6], RadioConfig())


def test_manifest_sorted_and_no_absolute_paths(tmp_path):
    res = run_campaign(CampaignConfig.from_dict(SMALL), output_dir=str(tmp_path / "d"))
    assert res.exit_code == 0
    m = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert m["num_samples"] == 1 * 2 * 2
    ids = [s["id"] for s in m["samples"]]
    assert ids == sorted(ids)
    text = json.dumps(m)
    assert str(tmp_path) not in text
    for s in m["samples"]:
        assert all(not os.path.isabs(p) for p in s["files"].values())
        assert s["community"] is not None and f"community_{s['community']:02d}" in s["files"]["rgb"]
    assert validate_dataset(tmp_path / "d") == []
    assert (tmp_path / "d" / "scene_000" / "sensing_graph.json").exists()
    assert (tmp_path / "d" / "scene_000" / "cameras.json").exists()


def test_campaign_deterministic(tmp_path):
    cfg = CampaignConfig.from_dict(SMALL)
    run_campaign(cfg, output_dir=str(tmp_path / "a"))
    run_campaign(cfg, output_dir=str(tmp_path / "b"))
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    other = CampaignConfig.from_dict({**SMALL, "seed": 6})
    run_campaign(other, output_dir=str(tmp_path / "c"))
    assert _tree(tmp_path / "a") != _tree(tmp_path / "c")


def test_stages(tmp_path):
    cfg = CampaignConfig.from_dict(SMALL)
    run_campaign(cfg, "generate", str(tmp_path / "g"))
    assert os.path.exists(tmp_path / "g" / "scene_000" / "scene.obj")
    assert not os.path.exists(tmp_path / "g" / "scene_000" / "cameras.json")
    run_campaign(cfg, "render", str(tmp_path / "r"))
    assert os.path.exists(tmp_path / "r" / "scene_000" / "v001" / "depth.pfm")
    assert not os.path.exists(tmp_path / "r" / "scene_000" / "sensing_graph.json")
    run_campaign(cfg, "orchestrate", str(tmp_path / "o"))
    assert os.path.exists(tmp_path / "o" / "scene_000" / "sensing_graph.json")
    res = run_campaign(cfg, "simulate", str(tmp_path / "s"))
    assert res.num_samples == 4 and not os.path.exists(tmp_path / "s" / "scene_000" / "sensing_graph.json")
    with pytest.raises(ConfigError):
        run_campaign(cfg, "bake")


def test_partial_failure_recorded(tmp_path):
    cfg = CampaignConfig.from_dict({**SMALL, "scenes": [{"archetype": "Downtown", "grid_extent": 90}],
                                    "tx_clearance": 1e4, "tx_per_view": 1})
    res = run_campaign(cfg, output_dir=str(tmp_path / "p"))
    assert res.exit_code == 2 and res.num_samples == 0 and len(res.manifest.errors) == 2


@pytest.mark.parametrize("bad", [
    {"scenes": []},
    {"scenes": [{"archetype": "Suburb"}]},
    {"tx_per_view": 0},
    {"tx_placement": "anywhere"},
    {"trajectory": {"kind": "Satellite"}},
    {"radio": {"frequency": -1}},
    {"seed": -3},
    {"unknown_key": 1},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        CampaignConfig.from_dict({**SMALL, **bad})


def test_scene_seeds_derived():
    cfg = CampaignConfig.from_dict({**SMALL, "scenes": ["Margin", "Margin"]})
    assert cfg.scene_spec(0).seed != cfg.scene_spec(1).seed
    assert cfg.scene_spec(0).seed == CampaignConfig.from_dict({**SMALL}).scene_spec(0).seed


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "output_dir": str(tmp_path / "out")}))
    assert main(["campaign", "--config", str(cfg), "--seed", "9"]) == 0
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["campaign"]["seed"] == 9
    assert main(["analyze", "--config", str(cfg)]) == 0
    rep = tmp_path / "out" / "analysis"
    header = (rep / "per_sample.csv").read_text().splitlines()[0]
    assert header == "sample,archetype,mean_db,max_db,std_db,rpb_Roads,rpb_Buildings,rpb_Roofs"
    assert len((rep / "histograms.csv").read_text().splitlines()) == 161
    assert json.loads((rep / "summary.json").read_text())["num_samples"] == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["campaign", "--config", str(bad)]) == 1
    assert main(["render", "--config", str(tmp_path / "missing.json")]) == 1
