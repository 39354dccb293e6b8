"""Flattening of a Scene into plain array bundles for the compiled kernels.

Everything the hot loops touch lives in namedtuples of contiguous float64 /
int64 arrays: triangle soup + BVH nodes, a packed texture atlas, material
records and analytic light records. Built once per scene and cached.
"""

from __future__ import annotations

import numpy as np

from ._kernels import FlatScene, Geo, Lamps, Mats, Nodes, Tex, Wins
from .errors import SceneError
from .lights import LampLight, WindowLight
from .texture import Texture


class _Atlas:
    def __init__(self):
        self.chunks: list[np.ndarray] = []
        self.off = [0]
        self.h: list[int] = []
        self.w: list[int] = []
        self.c: list[int] = []

    def add(self, texture: Texture | None) -> int:
        if texture is None:
            return -1
        data = np.ascontiguousarray(texture.data, dtype=np.float64)
        idx = len(self.h)
        self.chunks.append(data.ravel())
        self.h.append(data.shape[0])
        self.w.append(data.shape[1])
        self.c.append(data.shape[2])
        self.off.append(self.off[-1] + data.size)
        return idx

    def pack(self) -> Tex:
        data = np.concatenate(self.chunks) if self.chunks else np.zeros(0)
        return Tex(
            data=data,
            off=np.asarray(self.off[:-1] or [0], dtype=np.int64),
            h=np.asarray(self.h or [0], dtype=np.int64),
            w=np.asarray(self.w or [0], dtype=np.int64),
            c=np.asarray(self.c or [0], dtype=np.int64),
        )


def _tri_tangents(e1, e2, duv1, duv2, face_n):
    """Per-triangle tangents from the UV parameterization, with a stable
    fallback frame where UVs are degenerate."""
    det = duv1[:, 0] * duv2[:, 1] - duv1[:, 1] * duv2[:, 0]
    tan = np.zeros_like(e1)
    ok = np.abs(det) > 1e-12
    f = np.zeros(len(det))
    f[ok] = 1.0 / det[ok]
    tan[ok] = (e1[ok] * duv2[ok, 1, None] - e2[ok] * duv1[ok, 1, None]) * f[ok, None]
    # fallback: any vector orthogonal to the face normal
    alt = np.where(np.abs(face_n[:, 0:1]) > 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    tan[~ok] = np.cross(alt[~ok], face_n[~ok])
    tan -= face_n * (tan * face_n).sum(axis=1, keepdims=True)
    norm = np.linalg.norm(tan, axis=1)
    bad = norm < 1e-12
    if bad.any():
        tan[bad] = np.cross(np.where(np.abs(face_n[bad, 0:1]) > 0.9,
                                     [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]]), face_n[bad])
        norm = np.linalg.norm(tan, axis=1)
        norm[norm < 1e-12] = 1.0
    return tan / norm[:, None]


def build_flat_scene(scene) -> FlatScene:
    n_tris = sum(m.n_triangles for m in scene.meshes)
    v0 = np.zeros((n_tris, 3)); e1 = np.zeros((n_tris, 3)); e2 = np.zeros((n_tris, 3))
    n0 = np.zeros((n_tris, 3)); n1 = np.zeros((n_tris, 3)); n2 = np.zeros((n_tris, 3))
    uv0 = np.zeros((n_tris, 2)); uv1 = np.zeros((n_tris, 2)); uv2 = np.zeros((n_tris, 2))
    t_mat = np.zeros(n_tris, dtype=np.int64)
    t_inst = np.zeros(n_tris, dtype=np.int64)
    t_light = np.full(n_tris, -1, dtype=np.int64)
    t_mesh = np.zeros(n_tris, dtype=np.int64)

    pos = 0
    default_uv = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    for mi, mesh in enumerate(scene.meshes):
        m = mesh.n_triangles
        tri = mesh.triangles
        v = mesh.vertices
        sl = slice(pos, pos + m)
        v0[sl] = v[tri[:, 0]]
        e1[sl] = v[tri[:, 1]] - v[tri[:, 0]]
        e2[sl] = v[tri[:, 2]] - v[tri[:, 0]]
        if mesh.normals is not None:
            n0[sl] = mesh.normals[tri[:, 0]]
            n1[sl] = mesh.normals[tri[:, 1]]
            n2[sl] = mesh.normals[tri[:, 2]]
        else:
            fn = mesh.face_normals()
            n0[sl] = n1[sl] = n2[sl] = fn
        if mesh.uvs is not None:
            uv0[sl] = mesh.uvs[tri[:, 0]]
            uv1[sl] = mesh.uvs[tri[:, 1]]
            uv2[sl] = mesh.uvs[tri[:, 2]]
        else:
            uv0[sl] = default_uv[0]
            uv1[sl] = default_uv[1]
            uv2[sl] = default_uv[2]
        t_mat[sl] = scene.mesh_material[mi]
        t_inst[sl] = mesh.instance_id
        t_light[sl] = -1 if mesh.light_link is None else mesh.light_link
        t_mesh[sl] = mi
        pos += m

    face_n = np.cross(e1, e2)
    fl = np.linalg.norm(face_n, axis=1)
    fl[fl == 0.0] = 1.0
    face_n = face_n / fl[:, None]
    tan = _tri_tangents(e1, e2, uv1 - uv0, uv2 - uv0, face_n) if n_tris else np.zeros((0, 3))

    geo = Geo(v0=v0, e1=e1, e2=e2, n0=n0, n1=n1, n2=n2,
              uv0=uv0, uv1=uv1, uv2=uv2, tan=tan,
              mat=t_mat, inst=t_inst, light=t_light, mesh=t_mesh)

    if scene.bvh is not None and n_tris:
        b = scene.bvh
        nodes = Nodes(bmin=b.bmin, bmax=b.bmax, left=b.left, right=b.right,
                      first=b.first, count=b.count, order=b.order)
    else:
        nodes = Nodes(
            bmin=np.full((1, 3), np.inf), bmax=np.full((1, 3), -np.inf),
            left=np.full(1, -1, dtype=np.int64), right=np.full(1, -1, dtype=np.int64),
            first=np.zeros(1, dtype=np.int64), count=np.zeros(1, dtype=np.int64),
            order=np.zeros(0, dtype=np.int64),
        )

    atlas = _Atlas()
    n_mats = len(scene.materials)
    alb_tex = np.full(n_mats, -1, dtype=np.int64)
    rough_tex = np.full(n_mats, -1, dtype=np.int64)
    norm_tex = np.full(n_mats, -1, dtype=np.int64)
    alb_const = np.zeros((n_mats, 3))
    rough_const = np.zeros(n_mats)
    uv_scale = np.ones((n_mats, 2))
    f0 = np.zeros(n_mats)
    for i, mat in enumerate(scene.materials):
        if isinstance(mat.albedo, Texture):
            alb_tex[i] = atlas.add(mat.albedo)
        else:
            alb_const[i] = mat.albedo
        if isinstance(mat.roughness, Texture):
            rough_tex[i] = atlas.add(mat.roughness)
        else:
            rough_const[i] = mat.roughness
        norm_tex[i] = atlas.add(mat.normal_map)
        uv_scale[i] = mat.uv_scale
        f0[i] = mat.f0
    mats = Mats(alb_tex=alb_tex, rough_tex=rough_tex, norm_tex=norm_tex,
                alb_const=alb_const, rough_const=rough_const, uv_scale=uv_scale, f0=f0)

    lamps_list = [(i, l) for i, l in enumerate(scene.lights) if isinstance(l, LampLight)]
    wins_list = [(i, l) for i, l in enumerate(scene.lights) if isinstance(l, WindowLight)]
    linked = {mesh.light_link for mesh in scene.meshes if mesh.light_link is not None}
    for li in linked:
        if not isinstance(scene.lights[li], LampLight):
            raise SceneError(f"light_link {li}: only lamp lights may be mesh-linked")

    nl = len(lamps_list)
    lamps = Lamps(
        center=np.array([l.center for _, l in lamps_list]).reshape(nl, 3),
        half=np.array([l.half_extents for _, l in lamps_list]).reshape(nl, 3),
        rot=np.array([l.rotation for _, l in lamps_list]).reshape(nl, 3, 3),
        emit=np.array([l.emission() for _, l in lamps_list]).reshape(nl, 3),
        area=np.array([l.face_areas() for _, l in lamps_list]).reshape(nl, 3),
        light_id=np.array([i for i, _ in lamps_list], dtype=np.int64),
        blocked=np.array([i not in linked for i, _ in lamps_list], dtype=np.bool_),
    )
    nw = len(wins_list)
    wins = Wins(
        corner=np.array([l.corner for _, l in wins_list]).reshape(nw, 3),
        eu=np.array([l.edge_u for _, l in wins_list]).reshape(nw, 3),
        ev=np.array([l.edge_v for _, l in wins_list]).reshape(nw, 3),
        normal=np.array([l.normal for _, l in wins_list]).reshape(nw, 3),
        area=np.array([l.area for _, l in wins_list], dtype=np.float64).reshape(nw),
        tex=np.array([atlas.add(l.envmap) for _, l in wins_list], dtype=np.int64).reshape(nw),
        intensity=np.array([l.intensity for _, l in wins_list], dtype=np.float64).reshape(nw),
        light_id=np.array([i for i, _ in wins_list], dtype=np.int64).reshape(nw),
    )

    n_lights = len(scene.lights)
    light_kind = np.zeros(n_lights, dtype=np.int64)
    light_sub = np.zeros(n_lights, dtype=np.int64)
    for sub, (i, _) in enumerate(lamps_list):
        light_kind[i] = 0
        light_sub[i] = sub
    for sub, (i, _) in enumerate(wins_list):
        light_kind[i] = 1
        light_sub[i] = sub

    return FlatScene(
        geo=geo, nodes=nodes, mats=mats, tex=atlas.pack(), lamps=lamps, wins=wins,
        light_kind=light_kind, light_sub=light_sub, n_lights=n_lights,
        eps=scene.shadow_eps,
    )
