"""Shared fixtures: scene files and programmatic fixture scenes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from roomlab.geometry import Camera, make_box_mesh, make_quad_mesh
from roomlab.lights import LampLight, WindowLight
from roomlab.pfm import write_pfm
from roomlab.scene import Scene, SvBrdfMaterial
from roomlab.texture import Texture


def _mesh_entry(mesh, material, **extra):
    entry = {
        "name": mesh.name,
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "material": material,
    }
    if mesh.uvs is not None:
        entry["uvs"] = mesh.uvs.tolist()
    entry.update(extra)
    return entry


def make_sky_image(width: int = 16, height: int = 8) -> np.ndarray:
    """Smooth positive HDR sky: brighter toward the zenith."""
    v = (np.arange(height) + 0.5) / height
    fall = 1.0 + 0.8 * np.cos(v * np.pi)[:, None, None]
    base = np.array([0.55, 0.65, 0.9])
    return (fall * base[None, None, :]).astype(np.float32)


def cornell_doc() -> dict:
    """Cornell-style room: 8 meshes (5 walls incl. a front wall with a window
    hole, 2 boxes), one ceiling lamp and one window light."""
    quads = {
        "floor": make_quad_mesh([0, 0, 0], [1, 0, 0], [0, 1, 0], name="floor"),
        "ceiling": make_quad_mesh([0, 0, 1], [0, 1, 0], [1, 0, 0], name="ceiling"),
        "back": make_quad_mesh([0, 1, 0], [1, 0, 0], [0, 0, 1], name="back"),
        "left": make_quad_mesh([0, 0, 0], [0, 1, 0], [0, 0, 1], name="left"),
        "right": make_quad_mesh([1, 0, 0], [0, 0, 1], [0, 1, 0], name="right"),
    }
    tall = make_box_mesh([0.3, 0.68, 0.15], [0.09, 0.09, 0.15], yaw_deg=-15.0, name="tall_box")
    short = make_box_mesh([0.72, 0.38, 0.09], [0.09, 0.09, 0.09], yaw_deg=20.0, name="short_box")
    # front wall (y = 0) with a hole for the window
    hole = (0.3, 0.7, 0.35, 0.75)   # x0, x1, z0, z1
    x0, x1, z0, z1 = hole
    fw_verts, fw_tris = [], []

    def strip(ax0, ax1, az0, az1):
        base = len(fw_verts)
        fw_verts.extend([[ax0, 0.0, az0], [ax1, 0.0, az0], [ax1, 0.0, az1], [ax0, 0.0, az1]])
        fw_tris.extend([[base, base + 1, base + 2], [base, base + 2, base + 3]])

    strip(0.0, x0, 0.0, 1.0)
    strip(x1, 1.0, 0.0, 1.0)
    strip(x0, x1, 0.0, z0)
    strip(x0, x1, z1, 1.0)

    meshes = [
        _mesh_entry(quads["floor"], "white"),
        _mesh_entry(quads["ceiling"], "white"),
        _mesh_entry(quads["back"], "white"),
        _mesh_entry(quads["left"], "red"),
        _mesh_entry(quads["right"], "green"),
        _mesh_entry(tall, "box_gray"),
        _mesh_entry(short, "box_gray"),
        {
            "name": "front",
            "vertices": fw_verts,
            "triangles": fw_tris,
            "material": "white",
        },
    ]
    return {
        "meshes": meshes,
        "materials": [
            {"id": "white", "albedo": [0.75, 0.75, 0.75], "roughness": 0.9},
            {"id": "red", "albedo": [0.65, 0.08, 0.08], "roughness": 0.9},
            {"id": "green", "albedo": [0.08, 0.65, 0.08], "roughness": 0.9},
            {"id": "box_gray", "albedo": [0.65, 0.65, 0.65], "roughness": 0.85},
        ],
        "lights": [
            {"type": "lamp", "center": [0.5, 0.5, 0.99],
             "half_extents": [0.13, 0.105, 0.0], "temperature": 6500, "intensity": 8.0},
            {"type": "window", "corner": [x0, 0.0, z0],
             "edge_u": [x1 - x0, 0.0, 0.0], "edge_v": [0.0, 0.0, z1 - z0],
             "envmap": "sky.pfm", "intensity": 1.0},
        ],
        "cameras": [
            {"position": [0.5, 0.12, 0.5], "look_at": [0.5, 1.0, 0.5],
             "up": [0, 0, 1], "fov_deg": 75, "width": 96, "height": 96},
        ],
    }


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("fixtures")
    write_pfm(make_sky_image(), d / "sky.pfm")
    (d / "cornell.json").write_text(json.dumps(cornell_doc(), indent=2))
    return d


@pytest.fixture(scope="session")
def cornell_path(fixture_dir) -> Path:
    return fixture_dir / "cornell.json"


@pytest.fixture(scope="session")
def cornell_scene(cornell_path):
    from roomlab.scene import load_scene

    return load_scene(cornell_path)


def plane_lamp_scene(lamp_half=(0.15, 0.15, 0.0), lamp_z=1.0, intensity=10.0,
                     temperature=6000.0, roughness=0.6, albedo=0.5,
                     cam_kw=None) -> Scene:
    """Large gray plane at z = 0 plus one flat square lamp above it."""
    plane = make_quad_mesh([-4, -4, 0], [8, 0, 0], [0, 8, 0], name="floor")
    mat = SvBrdfMaterial(name="gray", albedo=[albedo] * 3, roughness=roughness)
    lamp = LampLight(center=[0.0, 0.0, lamp_z], half_extents=list(lamp_half),
                     temperature=temperature, intensity=intensity)
    cam_kw = cam_kw or {}
    camera = Camera.looking_at(cam_kw.pop("position", [0.9, -0.9, 0.7]),
                               cam_kw.pop("target", [0.0, 0.3, 0.0]),
                               fov_deg=cam_kw.pop("fov_deg", 55),
                               width=cam_kw.pop("width", 64),
                               height=cam_kw.pop("height", 64))
    return Scene(meshes=[plane], materials=[mat], mesh_material=[0],
                 lights=[lamp], cameras=[camera])


def constant_env_window_scene(radiance=(1.0, 1.0, 1.0), size=2000.0,
                              roughness=0.6, albedo=0.5) -> Scene:
    """A plane under a huge window rectangle carrying a constant environment:
    the shading point at the origin sees radiance L0 over the whole upper
    hemisphere (up to a vanishing grazing sliver)."""
    plane = make_quad_mesh([-4, -4, 0], [8, 0, 0], [0, 8, 0], name="floor")
    mat = SvBrdfMaterial(name="gray", albedo=[albedo] * 3, roughness=roughness)
    env = Texture(np.tile(np.asarray(radiance, dtype=np.float32), (2, 4, 1)))
    window = WindowLight(corner=[-size / 2, -size / 2, 1.0],
                         edge_u=[size, 0.0, 0.0], edge_v=[0.0, size, 0.0], envmap=env)
    camera = Camera.looking_at([0.5, -0.5, 0.5], [0, 0, 0], fov_deg=60, width=8, height=8)
    return Scene(meshes=[plane], materials=[mat], mesh_material=[0],
                 lights=[window], cameras=[camera])
