"""Reflectance disks, descriptors, friction tables and URDF export."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from roomlab.friction import (
    FrictionAnchor, FrictionTable, build_friction_table, disk_descriptor,
    export_urdf, friction_map, lookup_friction, render_reflectance_disk,
)
from roomlab.geometry import Camera, make_box_mesh, make_quad_mesh
from roomlab.lights import LampLight
from roomlab.scene import Scene, SvBrdfMaterial

# on-grid anchor parameters for a 16-node axis (k/15)
WOOD = FrictionAnchor(albedo_gray=9 / 15, roughness=12 / 15, mu=0.76, name="wood")
WAX = FrictionAnchor(albedo_gray=8 / 15, roughness=2 / 15, mu=0.31, name="wax")
CARPET = FrictionAnchor(albedo_gray=5 / 15, roughness=14 / 15, mu=0.76, name="carpet")


def test_disk_zero_outside_circle():
    disk = render_reflectance_disk(0.5, 0.4, resolution=64)
    res = disk.image.shape[0]
    ys, xs = np.mgrid[0:res, 0:res]
    c = (res - 1) / 2.0
    r = np.sqrt((xs - c) ** 2 + (ys - c) ** 2) / (res / 2.0)
    assert np.all(disk.image[r > 1.0] == 0.0)
    assert np.all(disk.image >= 0.0)


def test_disk_azimuthal_symmetry():
    """Isotropic BRDF: intensity varies only with radius, so pixels sharing
    an exact radius (full azimuth orbits) carry identical values."""
    disk = render_reflectance_disk(0.5, 0.3, resolution=96)
    res = disk.image.shape[0]
    ys, xs = np.mgrid[0:res, 0:res]
    c = (res - 1) / 2.0
    r2 = (xs - c) ** 2 + (ys - c) ** 2
    inside = np.sqrt(r2) / (res / 2.0) <= 1.0
    groups = {}
    for radius_sq, val in zip(np.round(r2[inside], 9).ravel(), disk.image[inside].ravel()):
        groups.setdefault(radius_sq, []).append(val)
    checked = 0
    for vals in groups.values():
        if len(vals) < 4:
            continue
        arr = np.asarray(vals)
        assert arr.var() < 1e-6 * max(arr.mean() ** 2, 1e-12)
        checked += 1
    assert checked > 100


def test_disk_specular_peakier_at_low_roughness():
    smooth = render_reflectance_disk(0.5, 0.1, resolution=64)
    rough = render_reflectance_disk(0.5, 1.0, resolution=64)
    ratio = lambda d: d.image.max() / d.image[d.image > 0].mean()
    assert ratio(rough) < ratio(smooth)


def test_disk_black_material_zero():
    disk = render_reflectance_disk(0.0, 0.5, resolution=32, f0=0.0)
    assert np.all(disk.image == 0.0)


def test_disk_resolution_validation():
    with pytest.raises(ValueError):
        render_reflectance_disk(0.5, 0.5, resolution=8)


def test_descriptor_zero_disk():
    disk = render_reflectance_disk(0.0, 0.5, resolution=32, f0=0.0)
    desc = disk_descriptor(disk)
    assert desc.shape == (64,)
    assert np.all(desc == 0.0)


def test_descriptor_rotation_invariant():
    disk = render_reflectance_disk(0.6, 0.35, resolution=64)
    rotated = type(disk)(image=np.rot90(disk.image).copy(),
                         albedo_gray=disk.albedo_gray, roughness=disk.roughness)
    a = disk_descriptor(disk)
    b = disk_descriptor(rotated)
    assert np.allclose(a, b, atol=1e-9)


def test_descriptor_normalized_and_discriminative():
    d02 = disk_descriptor(render_reflectance_disk(0.5, 0.2))
    d025 = disk_descriptor(render_reflectance_disk(0.5, 0.25))
    d09 = disk_descriptor(render_reflectance_disk(0.5, 0.9))
    for d in (d02, d025, d09):
        assert np.linalg.norm(d) == pytest.approx(1.0, rel=1e-9)
    assert np.linalg.norm(d02 - d09) > np.linalg.norm(d02 - d025)


def test_build_table_single_anchor():
    table = build_friction_table([FrictionAnchor(0.5, 0.5, 0.5)],
                                 albedo_axis=np.linspace(0, 1, 4),
                                 roughness_axis=np.linspace(0, 1, 4),
                                 resolution=24)
    assert np.all(table.mu == 0.5)


@pytest.fixture(scope="module")
def anchor_table():
    axis = np.linspace(0.0, 1.0, 16)
    return build_friction_table([WOOD, WAX, CARPET], albedo_axis=axis,
                                roughness_axis=axis, resolution=32)


def test_table_reproduces_anchor_mu(anchor_table):
    """Nodes that coincide with an anchor's parameters take that anchor's
    friction exactly (zero descriptor distance)."""
    assert lookup_friction(anchor_table, WOOD.albedo_gray, WOOD.roughness) == 0.76
    assert lookup_friction(anchor_table, WAX.albedo_gray, WAX.roughness) == 0.31
    assert lookup_friction(anchor_table, CARPET.albedo_gray, CARPET.roughness) == 0.76
    for mode in ("nearest", "bilinear"):
        assert lookup_friction(anchor_table, WAX.albedo_gray, WAX.roughness,
                               mode=mode) == 0.31


def test_table_mu_within_anchor_range(anchor_table):
    assert anchor_table.mu.min() >= 0.31
    assert anchor_table.mu.max() <= 0.76


def test_build_requires_anchors():
    with pytest.raises(ValueError):
        build_friction_table([])


def test_lookup_bilinear_midpoint():
    table = FrictionTable(albedo_axis=np.array([0.0, 1.0]),
                          roughness_axis=np.array([0.0, 1.0]),
                          mu=np.array([[0.2, 0.4], [0.6, 0.8]]))
    # midpoint along the roughness axis at albedo node 0
    assert lookup_friction(table, 0.0, 0.5, mode="bilinear") == pytest.approx(0.3)
    assert lookup_friction(table, 0.5, 0.0, mode="bilinear") == pytest.approx(0.4)
    assert lookup_friction(table, 0.5, 0.5, mode="bilinear") == pytest.approx(0.5)


def test_lookup_modes_agree_at_nodes():
    rng = np.random.default_rng(0)
    table = FrictionTable(albedo_axis=np.linspace(0, 1, 5),
                          roughness_axis=np.linspace(0, 1, 7),
                          mu=rng.random((5, 7)))
    for i, a in enumerate(table.albedo_axis):
        for j, r in enumerate(table.roughness_axis):
            assert lookup_friction(table, a, r, "nearest") == table.mu[i, j]
            assert lookup_friction(table, a, r, "bilinear") == pytest.approx(table.mu[i, j])


def test_lookup_clamps_outside_hull():
    table = FrictionTable(albedo_axis=np.linspace(0.2, 0.8, 3),
                          roughness_axis=np.linspace(0.2, 0.8, 3),
                          mu=np.arange(9, dtype=np.float64).reshape(3, 3) / 10.0)
    assert lookup_friction(table, -5.0, -5.0, "nearest") == table.mu[0, 0]
    assert lookup_friction(table, 9.0, 9.0, "bilinear") == pytest.approx(table.mu[2, 2])


def test_lookup_bilinear_continuous():
    rng = np.random.default_rng(1)
    table = FrictionTable(albedo_axis=np.linspace(0, 1, 6),
                          roughness_axis=np.linspace(0, 1, 6),
                          mu=rng.random((6, 6)))
    xs = np.linspace(0, 1, 301)
    vals = lookup_friction(table, xs, np.full_like(xs, 0.37), mode="bilinear")
    assert np.abs(np.diff(vals)).max() < 0.05


def test_table_json_roundtrip(tmp_path, anchor_table):
    path = tmp_path / "table.json"
    anchor_table.save(path)
    back = FrictionTable.load(path)
    assert np.array_equal(back.mu, anchor_table.mu)
    assert np.allclose(back.descriptors, anchor_table.descriptors)
    assert [a.name for a in back.anchors] == ["wood", "wax", "carpet"]


def test_build_deterministic():
    axis = np.linspace(0, 1, 5)
    t1 = build_friction_table([WAX, WOOD], albedo_axis=axis, roughness_axis=axis,
                              resolution=24)
    t2 = build_friction_table([WAX, WOOD], albedo_axis=axis, roughness_axis=axis,
                              resolution=24)
    assert np.array_equal(t1.mu, t2.mu)
    assert np.array_equal(t1.descriptors, t2.descriptors)


def _two_floor_scene():
    """Two half-floors: wax-like (left) and carpet-like (right) materials."""
    left = make_quad_mesh([-2, -2, 0], [2, 0, 0], [0, 4, 0], name="wax_floor")
    right = make_quad_mesh([0, -2, 0], [2, 0, 0], [0, 4, 0], name="carpet_floor")
    mats = [
        SvBrdfMaterial(name="wax", albedo=[WAX.albedo_gray] * 3, roughness=WAX.roughness),
        SvBrdfMaterial(name="carpet", albedo=[CARPET.albedo_gray] * 3,
                       roughness=CARPET.roughness),
    ]
    lamp = LampLight(center=[0, 0, 2], half_extents=[0.2, 0.2, 0.0], temperature=6000)
    cam = Camera(position=[0, 0, 2.5], direction=[0, 0, -1], up=[0, 1, 0],
                 fov_deg=70, width=32, height=32)
    return Scene(meshes=[left, right], materials=mats, mesh_material=[0, 1],
                 lights=[lamp], cameras=[cam])


def test_friction_map_two_regions(anchor_table):
    scene = _two_floor_scene()
    mu = friction_map(scene, 0, anchor_table, mode="nearest")
    vals = np.unique(mu[mu > 0])
    assert set(np.round(vals, 6)) == {0.31, 0.76}
    # uniform-material half-planes: left all wax, right all carpet
    assert np.all(mu[:, :12][mu[:, :12] > 0] == 0.31)
    assert np.all(mu[:, 20:][mu[:, 20:] > 0] == 0.76)


def test_friction_map_background_zero(anchor_table):
    plane = make_quad_mesh([-0.2, -0.2, 0], [0.4, 0, 0], [0, 0.4, 0], name="small")
    mat = SvBrdfMaterial(name="w", albedo=[WOOD.albedo_gray] * 3, roughness=WOOD.roughness)
    cam = Camera(position=[0, 0, 1], direction=[0, 0, -1], up=[0, 1, 0],
                 fov_deg=90, width=24, height=24)
    scene = Scene(meshes=[plane], materials=[mat], mesh_material=[0], lights=[],
                  cameras=[cam])
    mu = friction_map(scene, 0, anchor_table)
    assert mu[0, 0] == 0.0            # corner rays miss the small plane
    assert mu[12, 12] == 0.76         # center hits it


def test_friction_map_uniform_scene_constant(anchor_table):
    plane = make_quad_mesh([-5, -5, 0], [10, 0, 0], [0, 10, 0], name="floor")
    mat = SvBrdfMaterial(name="w", albedo=[WOOD.albedo_gray] * 3, roughness=WOOD.roughness)
    cam = Camera(position=[0, 0, 1], direction=[0, 0, -1], up=[0, 1, 0],
                 fov_deg=60, width=16, height=16)
    scene = Scene(meshes=[plane], materials=[mat], mesh_material=[0], lights=[],
                  cameras=[cam])
    mu = friction_map(scene, 0, anchor_table)
    assert np.all(mu == 0.76)


def test_export_urdf_unit_cube(tmp_path, anchor_table):
    """Unit cube, mass 2, wood material: box inertia (2/12)(1+1) = 1/3 per
    axis and friction 0.76 from the anchor table."""
    cube = make_box_mesh([0, 0, 0.5], [0.5, 0.5, 0.5], name="cube")
    mat = SvBrdfMaterial(name="wood", albedo=[WOOD.albedo_gray] * 3,
                         roughness=WOOD.roughness)
    path = export_urdf(cube, mat, 2.0, anchor_table, tmp_path / "cube.urdf", name="cube")
    tree = ET.parse(path)
    robot = tree.getroot()
    assert robot.tag == "robot"
    links = robot.findall("link")
    assert len(links) == 1
    inertia = links[0].find("inertial/inertia")
    for axis in ("ixx", "iyy", "izz"):
        assert float(inertia.get(axis)) == pytest.approx(1.0 / 3.0, rel=1e-9)
    assert float(links[0].find("inertial/mass").get("value")) == 2.0
    friction = links[0].find("contact/lateral_friction")
    assert float(friction.get("value")) == pytest.approx(0.76)
    mesh_file = links[0].find("visual/geometry/mesh").get("filename")
    assert (tmp_path / mesh_file).exists()
    assert (tmp_path / links[0].find("collision/geometry/mesh").get("filename")).exists()


def test_export_urdf_deterministic(tmp_path, anchor_table):
    cube = make_box_mesh([0.1, -0.2, 0.5], [0.3, 0.4, 0.5], name="box")
    mat = SvBrdfMaterial(name="wax", albedo=[WAX.albedo_gray] * 3, roughness=WAX.roughness)
    p1 = export_urdf(cube, mat, 1.5, anchor_table, tmp_path / "a.urdf", name="box")
    first = p1.read_bytes()
    p2 = export_urdf(cube, mat, 1.5, anchor_table, tmp_path / "a.urdf", name="box")
    assert p2.read_bytes() == first


def test_export_urdf_degenerate_mesh(tmp_path, anchor_table):
    from roomlab.geometry import TriangleMesh
    from roomlab.errors import RoomlabError

    flat = TriangleMesh(vertices=[[0, 0, 0], [0, 0, 0], [0, 0, 0]],
                        triangles=[[0, 1, 2]], name="degenerate")
    mat = SvBrdfMaterial(name="m")
    with pytest.raises(RoomlabError, match="degenerate"):
        export_urdf(flat, mat, 1.0, anchor_table, tmp_path / "d.urdf")


def test_export_urdf_mass_validation(tmp_path, anchor_table):
    cube = make_box_mesh([0, 0, 0], [0.5, 0.5, 0.5], name="c")
    with pytest.raises(ValueError):
        export_urdf(cube, SvBrdfMaterial(name="m"), 0.0, anchor_table, tmp_path / "m.urdf")
