"""Scene container and JSON scene loading.

A scene file is one JSON document with ``meshes``, ``materials``, ``lights``
and ``cameras`` (see README for the schema). Everything is resolved eagerly:
OBJ files parsed, textures loaded, references checked, the BVH built. Loading
is deterministic and the resulting scene is immutable, so intersection is
safe from any number of threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brdf import F0_DEFAULT, MicrofacetParams
from .bvh import Bvh, build_bvh
from .errors import SceneError
from .geometry import Camera, TriangleMesh, load_obj
from .lights import LampLight, WindowLight
from .texture import Texture, load_texture


@dataclass
class SvBrdfMaterial:
    """Spatially-varying BRDF: albedo / roughness maps or constants, plus an
    optional tangent-space normal map."""

    name: str = ""
    albedo: Texture | np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))
    roughness: Texture | float = 0.7
    normal_map: Texture | None = None
    uv_scale: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    f0: float = F0_DEFAULT

    def __post_init__(self):
        if not isinstance(self.albedo, Texture):
            self.albedo = np.clip(np.asarray(self.albedo, dtype=np.float64).reshape(3), 0.0, 1.0)
        if not isinstance(self.roughness, Texture):
            self.roughness = float(self.roughness)
            if not (0.0 <= self.roughness <= 1.0):
                raise SceneError(f"material '{self.name}': roughness out of [0,1]")
        self.uv_scale = np.asarray(self.uv_scale, dtype=np.float64).reshape(2)


def sample_material(material: SvBrdfMaterial, uv) -> MicrofacetParams:
    """Bilinearly sample albedo/roughness at a UV (repeat wrap); constants
    pass through. Output is clamped to the valid parameter ranges."""
    uv = np.asarray(uv, dtype=np.float64).reshape(2)
    if not np.isfinite(uv).all():
        raise ValueError("uv must be finite")
    u, v = uv * material.uv_scale
    if isinstance(material.albedo, Texture):
        rgb = material.albedo.sample(u, v)
        albedo = np.clip(np.repeat(rgb, 3) if rgb.shape[-1] == 1 else rgb, 0.0, 1.0)
    else:
        albedo = material.albedo
    if isinstance(material.roughness, Texture):
        rough = float(np.clip(material.roughness.sample(u, v)[..., 0], 0.0, 1.0))
    else:
        rough = material.roughness
    return MicrofacetParams(albedo=albedo, roughness=rough, f0=material.f0)


@dataclass
class SurfaceHit:
    """Nearest-intersection record; ``hit`` False means a miss."""

    hit: bool
    t: float = np.inf
    position: np.ndarray | None = None
    geom_normal: np.ndarray | None = None
    shading_normal: np.ndarray | None = None
    uv: np.ndarray | None = None
    instance_id: int = -1
    mesh_index: int = -1
    material: SvBrdfMaterial | None = None
    light_link: int = -1


MISS = SurfaceHit(hit=False)


@dataclass
class Scene:
    meshes: list[TriangleMesh]
    materials: list[SvBrdfMaterial]
    mesh_material: list[int]           # per-mesh index into materials
    lights: list                        # WindowLight | LampLight
    cameras: list[Camera]
    bvh: Bvh | None = None
    path: str = ""

    def __post_init__(self):
        if len(self.mesh_material) != len(self.meshes):
            raise SceneError("every mesh needs a material assignment")
        for mi in self.mesh_material:
            if not (0 <= mi < len(self.materials)):
                raise SceneError(f"mesh material index {mi} out of range")
        for mesh in self.meshes:
            if mesh.light_link is not None and not (0 <= mesh.light_link < len(self.lights)):
                raise SceneError(
                    f"mesh '{mesh.name}': light_link {mesh.light_link} does not resolve"
                )
        self._flat = None
        if self.bvh is None and self.meshes:
            v0, e1, e2 = self._corners()
            self.bvh = build_bvh(v0, v0 + e1, v0 + e2)

    def _corners(self):
        v0s, e1s, e2s = [], [], []
        for mesh in self.meshes:
            v = mesh.vertices
            t = mesh.triangles
            v0s.append(v[t[:, 0]])
            e1s.append(v[t[:, 1]] - v[t[:, 0]])
            e2s.append(v[t[:, 2]] - v[t[:, 0]])
        return np.concatenate(v0s), np.concatenate(e1s), np.concatenate(e2s)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        los, his = [], []
        for mesh in self.meshes:
            lo, hi = mesh.bounds()
            los.append(lo)
            his.append(hi)
        for light in self.lights:
            if isinstance(light, LampLight):
                r = np.abs(light.rotation) @ light.half_extents
                los.append(light.center - r)
                his.append(light.center + r)
            elif isinstance(light, WindowLight):
                pts = np.array([
                    light.corner, light.corner + light.edge_u,
                    light.corner + light.edge_v, light.corner + light.edge_u + light.edge_v,
                ])
                los.append(pts.min(axis=0))
                his.append(pts.max(axis=0))
        if not los:
            return np.zeros(3), np.ones(3)
        return np.min(los, axis=0), np.max(his, axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo)) or 1.0

    @property
    def shadow_eps(self) -> float:
        return 1e-4 * self.diagonal

    def flat(self):
        """Flattened array form consumed by the compiled kernels (cached)."""
        if self._flat is None:
            from ._flat import build_flat_scene

            self._flat = build_flat_scene(self)
        return self._flat

    # -- queries ------------------------------------------------------------

    def intersect(self, origin, direction, t_min: float = 0.0, t_max: float = np.inf) -> SurfaceHit:
        """Nearest mesh intersection in (t_min, t_max); lights are not meshes
        and do not participate here."""
        from . import _kernels as K

        if not self.meshes:
            return MISS
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        direction = np.asarray(direction, dtype=np.float64).reshape(3)
        if t_max <= t_min:
            raise ValueError("empty t-range")
        flat = self.flat()
        tri, t, bu, bv = K.bvh_nearest_py(
            flat.geo, flat.nodes,
            origin[0], origin[1], origin[2],
            direction[0], direction[1], direction[2],
            t_min, t_max, -1,
        )
        if tri < 0:
            return MISS
        return self._make_hit(flat, int(tri), float(t), float(bu), float(bv), origin, direction)

    def _make_hit(self, flat, tri, t, bu, bv, origin, direction) -> SurfaceHit:
        from . import _kernels as K

        geo = flat.geo
        pos = origin + t * direction
        gx, gy, gz, sx, sy, sz, u, v = K.surface_attrs_py(
            flat.geo, flat.mats, flat.tex, tri, bu, bv,
            direction[0], direction[1], direction[2],
        )
        mesh_index = int(geo.mesh[tri])
        return SurfaceHit(
            hit=True, t=t, position=pos,
            geom_normal=np.array([gx, gy, gz]),
            shading_normal=np.array([sx, sy, sz]),
            uv=np.array([u, v]),
            instance_id=int(geo.inst[tri]),
            mesh_index=mesh_index,
            material=self.materials[self.mesh_material[mesh_index]],
            light_link=int(geo.light[tri]),
        )

    def occluded(self, a, b) -> bool:
        """True iff mesh geometry lies strictly between two points, with an
        epsilon margin (1e-4 of the scene diagonal) excluded at both ends."""
        from . import _kernels as K

        a = np.asarray(a, dtype=np.float64).reshape(3)
        b = np.asarray(b, dtype=np.float64).reshape(3)
        seg = b - a
        dist = float(np.linalg.norm(seg))
        if dist < 1e-15:
            raise ValueError("occluded() endpoints coincide")
        if not self.meshes:
            return False
        d = seg / dist
        eps = self.shadow_eps
        if dist - eps <= eps:
            return False
        flat = self.flat()
        return bool(
            K.bvh_any_py(flat.geo, flat.nodes, a[0], a[1], a[2], d[0], d[1], d[2],
                         eps, dist - eps, -1)
        )


# ---------------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SceneError(f"{where}: missing required field '{key}'")
    return obj[key]


def _vec3(obj, key, where):
    v = np.asarray(_require(obj, key, where), dtype=np.float64)
    if v.shape != (3,):
        raise SceneError(f"{where}.{key}: expected 3 numbers")
    if not np.isfinite(v).all():
        raise SceneError(f"{where}.{key}: non-finite value")
    return v


def _load_material(spec: dict, base: Path, index: int) -> SvBrdfMaterial:
    where = f"materials[{index}]"
    name = spec.get("id", f"material_{index}")

    def tex_or_value(key, default):
        val = spec.get(key, default)
        if isinstance(val, str):
            return load_texture(base / val)
        return val

    albedo = tex_or_value("albedo", [0.5, 0.5, 0.5])
    roughness = tex_or_value("roughness", 0.7)
    normal_map = spec.get("normal_map")
    if normal_map is not None:
        normal_map = load_texture(base / normal_map)
    try:
        return SvBrdfMaterial(
            name=name, albedo=albedo, roughness=roughness, normal_map=normal_map,
            uv_scale=np.asarray(spec.get("uv_scale", [1.0, 1.0]), dtype=np.float64),
            f0=float(spec.get("f0", F0_DEFAULT)),
        )
    except SceneError:
        raise
    except Exception as exc:
        raise SceneError(f"{where}: {exc}") from exc


def _load_mesh(spec: dict, base: Path, index: int, n_lights: int) -> tuple[TriangleMesh, str]:
    where = f"meshes[{index}]"
    name = spec.get("name", f"mesh_{index}")
    material_id = _require(spec, "material", where)
    light_link = spec.get("light_link")
    if light_link is not None:
        light_link = int(light_link)
        if not (0 <= light_link < n_lights):
            raise SceneError(f"{where}: light_link {light_link} does not resolve")
    if "obj" in spec:
        mesh = load_obj(base / spec["obj"])
        mesh.name = name
        mesh.instance_id = int(spec.get("instance_id", index))
        mesh.light_link = light_link
        return mesh, material_id
    try:
        mesh = TriangleMesh(
            vertices=np.asarray(_require(spec, "vertices", where), dtype=np.float64),
            triangles=np.asarray(_require(spec, "triangles", where), dtype=np.int64),
            normals=np.asarray(spec["normals"], dtype=np.float64) if "normals" in spec else None,
            uvs=np.asarray(spec["uvs"], dtype=np.float64) if "uvs" in spec else None,
            instance_id=int(spec.get("instance_id", index)),
            light_link=light_link,
            name=name,
        )
    except SceneError as exc:
        raise SceneError(f"{where}: {exc}") from exc
    return mesh, material_id


def _load_light(spec: dict, base: Path, index: int):
    where = f"lights[{index}]"
    kind = _require(spec, "type", where)
    if kind == "lamp":
        return LampLight(
            center=_vec3(spec, "center", where),
            half_extents=_vec3(spec, "half_extents", where),
            temperature=float(_require(spec, "temperature", where)),
            intensity=float(spec.get("intensity", 1.0)),
            yaw_deg=float(spec.get("yaw_deg", 0.0)),
        )
    if kind == "window":
        return WindowLight(
            corner=_vec3(spec, "corner", where),
            edge_u=_vec3(spec, "edge_u", where),
            edge_v=_vec3(spec, "edge_v", where),
            envmap=load_texture(base / _require(spec, "envmap", where)),
            intensity=float(spec.get("intensity", 1.0)),
        )
    raise SceneError(f"{where}: unknown light type '{kind}'")


def _load_camera(spec: dict, index: int) -> Camera:
    where = f"cameras[{index}]"
    position = _vec3(spec, "position", where)
    if "direction" in spec:
        direction = _vec3(spec, "direction", where)
    elif "look_at" in spec:
        direction = _vec3(spec, "look_at", where) - position
    else:
        raise SceneError(f"{where}: needs 'direction' or 'look_at'")
    try:
        return Camera(
            position=position, direction=direction,
            up=np.asarray(spec.get("up", [0.0, 0.0, 1.0]), dtype=np.float64),
            fov_deg=float(_require(spec, "fov_deg", where)),
            width=int(spec.get("width", 320)), height=int(spec.get("height", 240)),
        )
    except SceneError as exc:
        raise SceneError(f"{where}: {exc}") from exc


def load_scene(path) -> Scene:
    """Load and fully resolve a scene JSON document."""
    path = Path(path)
    if not path.exists():
        raise SceneError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    base = path.parent

    lights = [_load_light(s, base, i) for i, s in enumerate(doc.get("lights", []))]

    materials = [_load_material(s, base, i) for i, s in enumerate(doc.get("materials", []))]
    mat_index = {}
    for i, m in enumerate(materials):
        if m.name in mat_index:
            raise SceneError(f"duplicate material id '{m.name}'")
        mat_index[m.name] = i

    meshes, mesh_material = [], []
    for i, spec in enumerate(doc.get("meshes", [])):
        mesh, mat_id = _load_mesh(spec, base, i, len(lights))
        if mat_id not in mat_index:
            raise SceneError(f"meshes[{i}]: unknown material id '{mat_id}'")
        meshes.append(mesh)
        mesh_material.append(mat_index[mat_id])

    cameras = [_load_camera(s, i) for i, s in enumerate(doc.get("cameras", []))]
    return Scene(
        meshes=meshes, materials=materials, mesh_material=mesh_material,
        lights=lights, cameras=cameras, path=str(path),
    )
