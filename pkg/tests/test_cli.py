"""CLI surface: subcommands, exit codes, output determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from roomlab.cli import main
from roomlab.pfm import read_pfm


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_render_writes_manifest(tmp_path, cornell_path, capsys):
    out = tmp_path / "out"
    code = main(["render", "--scene", str(cornell_path), "--spp", "4",
                 "--seed", "7", "--out", str(out)])
    assert code == 0
    manifest_path = out / "render_manifest.json"
    assert manifest_path.exists()
    manifest = json.loads(manifest_path.read_text())
    names = {c["name"] for c in manifest["channels"]}
    assert {"radiance", "albedo", "normal", "depth", "roughness"} <= names
    for entry in manifest["channels"]:
        assert (out / entry["file"]).exists()
    img = read_pfm(out / "render_radiance.pfm")
    assert img.shape == (96, 96, 3)
    assert img.max() > 0.0


def test_render_deterministic_rerun(tmp_path, cornell_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["render", "--scene", str(cornell_path), "--spp", "2",
                     "--seed", "3", "--out", str(out)]) == 0
    assert _tree_bytes(out1) == _tree_bytes(out2)


def test_channels_full_stack(tmp_path, cornell_path):
    out = tmp_path / "stack"
    code = main(["channels", "--scene", str(cornell_path), "--spp", "2",
                 "--seed", "1", "--out", str(out),
                 "--envmap-stride", "48", "--envmap-spp", "16",
                 "--envmap-bins", "4", "8"])
    assert code == 0
    manifest = json.loads((out / "render_manifest.json").read_text())
    names = {c["name"] for c in manifest["channels"]}
    assert {"light0_shading", "light0_shading_noocc", "light0_visibility",
            "light1_visibility", "envmap_direct", "envmap_combined"} <= names
    vis = read_pfm(out / "render_light0_visibility.pfm")
    assert vis.min() >= 0.0 and vis.max() <= 1.0


def test_missing_scene_is_input_error(tmp_path):
    code = main(["render", "--scene", "/no/such.json", "--out", str(tmp_path / "o")])
    assert code == 1


def test_usage_errors_exit_2(tmp_path, cornell_path):
    with pytest.raises(SystemExit) as exc:
        main(["render", "--out", str(tmp_path)])          # missing --scene
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["render", "--scene", str(cornell_path), "--out", str(tmp_path),
              "--frobnicate"])                              # unknown flag
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["definitely-not-a-command"])
    assert exc.value.code == 2


def test_fit_and_eval_layout(tmp_path):
    rng = np.random.default_rng(0)
    pts = np.zeros((5000, 3))
    pts[:, 0] = rng.uniform(0, 4, 5000)
    pts[:, 1] = rng.uniform(0, 3, 5000)
    pts[:, 2] = rng.normal(0, 0.005, 5000)
    lines = [f"{p[0]} {p[1]} {p[2]}" for p in pts]
    cloud = tmp_path / "cloud.txt"
    cloud.write_text("\n".join(lines))
    layout_path = tmp_path / "layout.json"
    assert main(["fit-layout", "--cloud", str(cloud), "--out", str(layout_path),
                 "--cell", "0.1", "--seed", "4"]) == 0
    doc = json.loads(layout_path.read_text())
    assert doc["height"] == 3.0
    assert "openings" in doc

    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps({"vertices": [[0, 0], [4, 0], [4, 3], [0, 3]],
                              "floor_z": 0.0, "height": 3.0}))
    metrics_path = tmp_path / "metrics.json"
    assert main(["eval-layout", "--pred", str(layout_path), "--gt", str(gt),
                 "--scale", "25", "--out", str(metrics_path)]) == 0
    metrics = json.loads(metrics_path.read_text())
    assert 0.0 <= metrics["iou"] <= 1.0
    assert metrics["iou"] > 0.8


def test_select_views_cli(tmp_path, cornell_path):
    layout = tmp_path / "layout.json"
    layout.write_text(json.dumps({
        "vertices": [[0.05, 0.05], [0.95, 0.05], [0.95, 0.95], [0.05, 0.95]],
        "floor_z": 0.0, "height": 1.0}))
    out = tmp_path / "views.json"
    code = main(["select-views", "--scene", str(cornell_path), "--layout", str(layout),
                 "--spacing", "0.45", "--height", "0.5", "--out", str(out)])
    assert code == 0
    views = json.loads(out.read_text())
    assert len(views) >= 4
    scores = [v["score"] for v in views]
    assert scores == sorted(scores, reverse=True)


def test_friction_pipeline_cli(tmp_path, cornell_path):
    anchors = tmp_path / "anchors.json"
    anchors.write_text(json.dumps([
        {"albedo_gray": 0.6, "roughness": 0.8, "mu": 0.76, "name": "wood"},
        {"albedo_gray": 0.5, "roughness": 0.1, "mu": 0.31, "name": "wax"},
    ]))
    table_path = tmp_path / "table.json"
    assert main(["friction-table", "--anchors", str(anchors), "--out", str(table_path),
                 "--grid", "6", "--disk-resolution", "24"]) == 0
    assert table_path.exists()

    map_path = tmp_path / "mu.pfm"
    assert main(["friction-map", "--scene", str(cornell_path), "--table",
                 str(table_path), "--out", str(map_path)]) == 0
    mu = read_pfm(map_path)
    assert mu.shape == (96, 96)
    assert mu.min() >= 0.0 and mu.max() <= 1.0

    urdf_path = tmp_path / "box.urdf"
    assert main(["export-urdf", "--scene", str(cornell_path), "--mesh", "tall_box",
                 "--mass", "2.0", "--table", str(table_path),
                 "--out", str(urdf_path)]) == 0
    assert urdf_path.read_text().startswith("<?xml")


def test_cli_subprocess_entrypoint(tmp_path, cornell_path):
    """End-to-end through a real process, including OR_THREADS byte identity."""
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    for out, threads in ((out1, "1"), (out2, "2")):
        proc = subprocess.run(
            [sys.executable, "-m", "roomlab.cli", "render",
             "--scene", str(cornell_path), "--spp", "2", "--seed", "11",
             "--out", str(out)],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "OR_THREADS": threads,
                 "HOME": "/root", "PYTHONPATH": ""},
        )
        assert proc.returncode == 0, proc.stderr
    assert _tree_bytes(out1) == _tree_bytes(out2)
