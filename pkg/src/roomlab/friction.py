"""Friction from appearance: virtual reflectance disks, radial descriptors,
BRDF-parameter-to-friction tables and URDF export.

A reflectance disk images a material over densely sampled view directions
through a (virtual) parabolic mirror: disk radius maps to view elevation,
azimuth is preserved, lighting comes from a narrow cone around the normal.
Disk appearance is summarized by an azimuth-averaged radial profile; friction
coefficients propagate from anchor materials to a regular grid over
(gray albedo, roughness) by nearest-descriptor assignment, and per-pixel
friction maps come from table lookups on the rendered G-buffer.
"""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brdf import eval_brdf_batch
from .errors import RoomlabError
from .integrator import RenderConfig, render
from .scene import Scene

DESCRIPTOR_BINS = 64
LIGHT_CONE_DEG = 5.0
DEFAULT_GRID = 16


@dataclass
class ReflectanceDisk:
    """Disk image (square, zero outside the inscribed circle) plus the BRDF
    parameters it was rendered with."""

    image: np.ndarray          # (res, res) float
    albedo_gray: float
    roughness: float


@dataclass
class FrictionAnchor:
    """A material with known friction: gray albedo, roughness, mu."""

    albedo_gray: float
    roughness: float
    mu: float
    name: str = ""

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"anchor '{self.name}': mu out of [0,1]")
        if not (0.0 <= self.albedo_gray <= 1.0 and 0.0 <= self.roughness <= 1.0):
            raise ValueError(f"anchor '{self.name}': parameters out of [0,1]")


def _cone_directions(half_angle_deg: float = LIGHT_CONE_DEG):
    """Small deterministic set of lighting directions around +z: the apex
    plus two rings inside the cone. Returned as (n, 3)."""
    dirs = [np.array([0.0, 0.0, 1.0])]
    for frac in (0.5, 1.0):
        theta = math.radians(half_angle_deg) * frac
        for k in range(6):
            phi = 2.0 * math.pi * k / 6.0
            dirs.append(np.array([
                math.sin(theta) * math.cos(phi),
                math.sin(theta) * math.sin(phi),
                math.cos(theta),
            ]))
    return np.stack(dirs)


def render_reflectance_disk(albedo_gray: float, roughness: float,
                            resolution: int = 64, f0: float = 0.05) -> ReflectanceDisk:
    """Render one disk: pixel radius maps linearly to view elevation (center
    = along the normal, rim = grazing), azimuth preserved; the value is the
    cone-averaged BRDF times the lighting cosine."""
    if resolution < 16:
        raise ValueError("disk resolution must be >= 16")
    ys, xs = np.mgrid[0:resolution, 0:resolution]
    cx = (resolution - 1) / 2.0
    u = (xs - cx) / (resolution / 2.0)
    v = (ys - cx) / (resolution / 2.0)
    r = np.sqrt(u * u + v * v)
    inside = r <= 1.0
    theta = np.clip(r, 0.0, 1.0) * (0.5 * math.pi) * (1.0 - 1e-6)
    # isotropic BRDF: the cone quadrature nodes live in the view-relative
    # frame, so the value depends on the view elevation only and the disk is
    # azimuthally symmetric by construction (azimuth folded to zero here)
    view = np.stack([np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=-1)
    normal = np.array([0.0, 0.0, 1.0])
    albedo = np.full(view.shape[:2] + (3,), albedo_gray)
    img = np.zeros(view.shape[:2])
    lights = _cone_directions()
    for l in lights:
        f = eval_brdf_batch(albedo, roughness, normal, view, l, f0=f0)
        img += f[..., 0] * l[2]
    img /= len(lights)
    img[~inside] = 0.0
    return ReflectanceDisk(image=img, albedo_gray=albedo_gray, roughness=roughness)


def disk_descriptor(disk: ReflectanceDisk, bins: int = DESCRIPTOR_BINS) -> np.ndarray:
    """Azimuth-averaged radial profile of log(1 + intensity), L2-normalized.

    An all-zero disk maps to the zero vector (normalization skipped).
    """
    img = np.asarray(disk.image, dtype=np.float64)
    res = img.shape[0]
    ys, xs = np.mgrid[0:res, 0:res]
    cx = (res - 1) / 2.0
    r = np.sqrt((xs - cx) ** 2 + (ys - cx) ** 2) / (res / 2.0)
    inside = r <= 1.0
    idx = np.minimum((r[inside] * bins).astype(np.int64), bins - 1)
    vals = np.log1p(np.maximum(img[inside], 0.0))
    sums = np.bincount(idx, weights=vals, minlength=bins)
    counts = np.bincount(idx, minlength=bins)
    profile = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    norm = np.linalg.norm(profile)
    if norm <= 0.0:
        return np.zeros(bins)
    return profile / norm


@dataclass
class FrictionTable:
    """Regular grid over (gray albedo, roughness) carrying a descriptor and a
    friction coefficient per node."""

    albedo_axis: np.ndarray      # (na,) strictly increasing in [0, 1]
    roughness_axis: np.ndarray   # (nr,)
    mu: np.ndarray               # (na, nr)
    descriptors: np.ndarray | None = None   # (na, nr, bins)
    anchors: list[FrictionAnchor] = field(default_factory=list)

    def __post_init__(self):
        self.albedo_axis = np.asarray(self.albedo_axis, dtype=np.float64)
        self.roughness_axis = np.asarray(self.roughness_axis, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        for axis in (self.albedo_axis, self.roughness_axis):
            if (np.diff(axis) <= 0.0).any() or axis.min() < 0.0 or axis.max() > 1.0:
                raise ValueError("grid axes must be strictly increasing in [0, 1]")
        if self.mu.shape != (len(self.albedo_axis), len(self.roughness_axis)):
            raise ValueError("mu grid shape mismatch")
        if ((self.mu < 0.0) | (self.mu > 1.0)).any():
            raise ValueError("mu values out of [0, 1]")

    def save(self, path):
        doc = {
            "albedo_axis": self.albedo_axis.tolist(),
            "roughness_axis": self.roughness_axis.tolist(),
            "mu": self.mu.tolist(),
            "descriptors": None if self.descriptors is None else self.descriptors.tolist(),
            "anchors": [
                {"albedo_gray": a.albedo_gray, "roughness": a.roughness,
                 "mu": a.mu, "name": a.name}
                for a in self.anchors
            ],
        }
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path) -> "FrictionTable":
        doc = json.loads(Path(path).read_text())
        return cls(
            albedo_axis=np.asarray(doc["albedo_axis"]),
            roughness_axis=np.asarray(doc["roughness_axis"]),
            mu=np.asarray(doc["mu"]),
            descriptors=None if doc.get("descriptors") is None else np.asarray(doc["descriptors"]),
            anchors=[FrictionAnchor(**a) for a in doc.get("anchors", [])],
        )


def build_friction_table(anchors: list[FrictionAnchor],
                         albedo_axis=None, roughness_axis=None,
                         resolution: int = 64) -> FrictionTable:
    """Render a disk per grid node, compute descriptors, and assign each node
    the friction of its nearest anchor in descriptor space."""
    if not anchors:
        raise ValueError("at least one friction anchor is required")
    if albedo_axis is None:
        albedo_axis = np.linspace(0.0, 1.0, DEFAULT_GRID)
    if roughness_axis is None:
        roughness_axis = np.linspace(0.0, 1.0, DEFAULT_GRID)
    albedo_axis = np.asarray(albedo_axis, dtype=np.float64)
    roughness_axis = np.asarray(roughness_axis, dtype=np.float64)
    anchor_desc = np.stack([
        disk_descriptor(render_reflectance_disk(a.albedo_gray, a.roughness, resolution))
        for a in anchors
    ])
    na, nr = len(albedo_axis), len(roughness_axis)
    mu = np.zeros((na, nr))
    descriptors = np.zeros((na, nr, DESCRIPTOR_BINS))
    for i, a_val in enumerate(albedo_axis):
        for j, r_val in enumerate(roughness_axis):
            desc = disk_descriptor(render_reflectance_disk(float(a_val), float(r_val), resolution))
            descriptors[i, j] = desc
            dist = np.linalg.norm(anchor_desc - desc, axis=1)
            mu[i, j] = anchors[int(np.argmin(dist))].mu
    return FrictionTable(albedo_axis=albedo_axis, roughness_axis=roughness_axis,
                         mu=mu, descriptors=descriptors, anchors=list(anchors))


def lookup_friction(table: FrictionTable, albedo_gray, roughness,
                    mode: str = "nearest"):
    """Friction at (gray albedo, roughness): nearest grid node or bilinear
    interpolation of the four surrounding nodes. Queries outside the grid
    hull clamp to the edge. Accepts scalars or arrays."""
    a = np.clip(np.asarray(albedo_gray, dtype=np.float64), table.albedo_axis[0],
                table.albedo_axis[-1])
    r = np.clip(np.asarray(roughness, dtype=np.float64), table.roughness_axis[0],
                table.roughness_axis[-1])
    if mode == "nearest":
        ia = np.abs(a[..., None] - table.albedo_axis).argmin(axis=-1)
        ir = np.abs(r[..., None] - table.roughness_axis).argmin(axis=-1)
        out = table.mu[ia, ir]
        return float(out) if out.ndim == 0 else out
    if mode == "bilinear":
        ia = np.clip(np.searchsorted(table.albedo_axis, a) - 1, 0,
                     len(table.albedo_axis) - 2)
        ir = np.clip(np.searchsorted(table.roughness_axis, r) - 1, 0,
                     len(table.roughness_axis) - 2)
        a0, a1 = table.albedo_axis[ia], table.albedo_axis[ia + 1]
        r0, r1 = table.roughness_axis[ir], table.roughness_axis[ir + 1]
        fa = np.where(a1 > a0, (a - a0) / (a1 - a0), 0.0)
        fr = np.where(r1 > r0, (r - r0) / (r1 - r0), 0.0)
        m00 = table.mu[ia, ir]
        m01 = table.mu[ia, ir + 1]
        m10 = table.mu[ia + 1, ir]
        m11 = table.mu[ia + 1, ir + 1]
        out = (m00 * (1 - fa) * (1 - fr) + m01 * (1 - fa) * fr
               + m10 * fa * (1 - fr) + m11 * fa * fr)
        return float(out) if out.ndim == 0 else out
    raise ValueError(f"unknown lookup mode '{mode}' (nearest|bilinear)")


def friction_map(scene: Scene, camera, table: FrictionTable,
                 mode: str = "nearest") -> np.ndarray:
    """Per-pixel friction from the first-hit BRDF parameters (gray albedo =
    channel mean); background and light-source pixels are 0."""
    channels = render(scene, camera, RenderConfig(spp=1, radiance=False, gbuffer=True))
    gray = channels.albedo.mean(axis=2)
    mu = lookup_friction(table, gray, channels.roughness, mode=mode)
    mu = np.asarray(mu)
    mu[channels.instance_mask < 0] = 0.0
    return mu


# ---------------------------------------------------------------------------
# URDF export
# ---------------------------------------------------------------------------


def _mesh_to_obj_lines(mesh) -> str:
    lines = [f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    return "\n".join(lines) + "\n"


def export_urdf(mesh, material, mass: float, table: FrictionTable, out_path,
                name: str = "object", mode: str = "nearest") -> Path:
    """Write a single-link URDF for a mesh: visual mesh, axis-aligned box
    collision mesh, solid-box inertia from the AABB extents, and a lateral
    friction coefficient from the material's mean table lookup.

    Writes ``<name>_visual.obj`` and ``<name>_collision.obj`` next to the
    URDF. Deterministic: identical inputs give byte-identical files.
    """
    from .geometry import make_box_mesh
    from .scene import sample_material
    from .texture import Texture

    if mass <= 0.0:
        raise ValueError("mass must be positive")
    lo, hi = mesh.bounds()
    extents = hi - lo
    if (extents <= 1e-12).all():
        raise RoomlabError(f"mesh '{name}': degenerate (zero extent)")
    extents = np.maximum(extents, 1e-9)
    center = (lo + hi) / 2.0

    # mean friction over the material's texels (constants are a single texel)
    if isinstance(material.albedo, Texture):
        gray = material.albedo.data.mean(axis=2, dtype=np.float64)
    else:
        gray = np.asarray([[material.albedo.mean()]])
    if isinstance(material.roughness, Texture):
        rough = material.roughness.data[:, :, 0].astype(np.float64)
    else:
        rough = np.asarray([[material.roughness]])
    if gray.shape != rough.shape:
        gh, gw = gray.shape
        rh, rw = rough.shape
        h, w = max(gh, rh), max(gw, rw)
        yy, xx = np.mgrid[0:h, 0:w]
        gray = gray[(yy * gh) // h, (xx * gw) // w]
        rough = rough[(yy * rh) // h, (xx * rw) // w]
    mu = float(np.mean(lookup_friction(table, gray, rough, mode=mode)))

    out_path = Path(out_path)
    visual_path = out_path.with_name(f"{name}_visual.obj")
    collision_path = out_path.with_name(f"{name}_collision.obj")
    visual_path.write_text(_mesh_to_obj_lines(mesh))
    collision_box = make_box_mesh(center, extents / 2.0, name=f"{name}_collision")
    collision_path.write_text(_mesh_to_obj_lines(collision_box))

    ex, ey, ez = extents
    ixx = mass / 12.0 * (ey * ey + ez * ez)
    iyy = mass / 12.0 * (ex * ex + ez * ez)
    izz = mass / 12.0 * (ex * ex + ey * ey)

    robot = ET.Element("robot", {"name": name})
    link = ET.SubElement(robot, "link", {"name": "base_link"})
    visual = ET.SubElement(link, "visual")
    geom_v = ET.SubElement(visual, "geometry")
    ET.SubElement(geom_v, "mesh", {"filename": visual_path.name})
    collision = ET.SubElement(link, "collision")
    geom_c = ET.SubElement(collision, "geometry")
    ET.SubElement(geom_c, "mesh", {"filename": collision_path.name})
    inertial = ET.SubElement(link, "inertial")
    ET.SubElement(inertial, "origin", {
        "xyz": f"{center[0]:.9g} {center[1]:.9g} {center[2]:.9g}", "rpy": "0 0 0"})
    ET.SubElement(inertial, "mass", {"value": f"{mass:.9g}"})
    ET.SubElement(inertial, "inertia", {
        "ixx": f"{ixx:.9g}", "iyy": f"{iyy:.9g}", "izz": f"{izz:.9g}",
        "ixy": "0", "ixz": "0", "iyz": "0"})
    contact = ET.SubElement(link, "contact")
    ET.SubElement(contact, "lateral_friction", {"value": f"{mu:.9g}"})

    ET.indent(robot)
    xml = ET.tostring(robot, encoding="unicode")
    out_path.write_text('<?xml version="1.0"?>\n' + xml + "\n")
    return out_path
