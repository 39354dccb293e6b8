"""Core geometric types: triangle meshes, cameras and a small OBJ reader.

All lengths are meters. Meshes are immutable after validation; the renderer
consumes them through the flattened arrays built in :mod:`roomlab._flat`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError

NORMAL_UNIT_TOL = 1e-4


def _as_array(x, shape_tail, name, dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2 or arr.shape[1:] != shape_tail:
        raise SceneError(f"{name}: expected shape (n, {shape_tail[0]}), got {arr.shape}")
    return arr


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with optional per-vertex normals and UVs."""

    vertices: np.ndarray          # (n, 3) positions
    triangles: np.ndarray         # (m, 3) vertex indices
    normals: np.ndarray | None = None    # (n, 3) unit vectors
    uvs: np.ndarray | None = None        # (n, 2) texture coords
    instance_id: int = 0
    light_link: int | None = None        # light index if this mesh is emissive
    name: str = ""

    def __post_init__(self):
        self.vertices = _as_array(self.vertices, (3,), f"mesh '{self.name}' vertices")
        self.triangles = _as_array(self.triangles, (3,), f"mesh '{self.name}' triangles", np.int64)
        if not np.isfinite(self.vertices).all():
            raise SceneError(f"mesh '{self.name}': non-finite vertex")
        if len(self.triangles) < 1:
            raise SceneError(f"mesh '{self.name}': needs at least 1 triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise SceneError(f"mesh '{self.name}': triangle index out of range")
        if self.normals is not None:
            self.normals = _as_array(self.normals, (3,), f"mesh '{self.name}' normals")
            if len(self.normals) != len(self.vertices):
                raise SceneError(f"mesh '{self.name}': normal count != vertex count")
            length = np.linalg.norm(self.normals, axis=1)
            if (np.abs(length - 1.0) > NORMAL_UNIT_TOL).any():
                if (length < 1e-8).any():
                    raise SceneError(f"mesh '{self.name}': zero-length normal")
                self.normals = self.normals / length[:, None]
        if self.uvs is not None:
            self.uvs = _as_array(self.uvs, (2,), f"mesh '{self.name}' uvs")
            if len(self.uvs) != len(self.vertices):
                raise SceneError(f"mesh '{self.name}': uv count != vertex count")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        length = np.linalg.norm(n, axis=1)
        length[length == 0.0] = 1.0
        return n / length[:, None]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class Camera:
    """Pinhole camera: position, unit view direction, up hint, vertical fov."""

    position: np.ndarray
    direction: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov_deg: float = 60.0
    width: int = 320
    height: int = 240

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.up = np.asarray(self.up, dtype=np.float64).reshape(3)
        if not (0.0 < self.fov_deg < 180.0):
            raise SceneError(f"camera fov must be in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise SceneError("camera resolution must be positive")
        d = np.linalg.norm(self.direction)
        if d < 1e-12:
            raise SceneError("camera direction must be nonzero")
        self.direction = self.direction / d
        u = np.linalg.norm(self.up)
        if u < 1e-12:
            raise SceneError("camera up must be nonzero")
        self.up = self.up / u
        if np.linalg.norm(np.cross(self.direction, self.up)) < 1e-9:
            raise SceneError("camera direction and up are parallel")

    @classmethod
    def looking_at(cls, position, target, **kw) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        direction = np.asarray(target, dtype=np.float64) - position
        return cls(position=position, direction=direction, **kw)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right-handed (right, up, forward) orthonormal frame."""
        fwd = self.direction
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    def tan_half(self) -> tuple[float, float]:
        tv = math.tan(math.radians(self.fov_deg) * 0.5)
        return tv * self.width / self.height, tv


def load_obj(path) -> TriangleMesh:
    """Parse the v/vn/vt/f OBJ subset with triangulated faces.

    Faces may use any of the ``v``, ``v/vt``, ``v//vn``, ``v/vt/vn`` index
    forms (1-based). Normals/uvs are re-indexed per vertex position; when a
    position is referenced with conflicting normals the vertex is duplicated.
    """
    positions: list[list[float]] = []
    normals: list[list[float]] = []
    uvs: list[list[float]] = []
    # corner key (v, vt, vn) -> output vertex index
    corner_index: dict[tuple[int, int, int], int] = {}
    out_v: list[list[float]] = []
    out_n: list[list[float]] = []
    out_uv: list[list[float]] = []
    tris: list[list[int]] = []
    any_n = False
    any_uv = False

    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in parts[1:4]])
                elif tag == "vn":
                    normals.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise SceneError(
                            f"{path}:{lineno}: face with {len(parts) - 1} vertices (triangulated OBJ required)"
                        )
                    corners = []
                    for spec in parts[1:]:
                        fields = spec.split("/")
                        vi = int(fields[0])
                        ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
                        ni = int(fields[2]) if len(fields) > 2 and fields[2] else 0
                        if vi < 1 or ti < 0 or ni < 0:
                            raise SceneError(f"{path}:{lineno}: unsupported face index '{spec}'")
                        key = (vi, ti, ni)
                        if key not in corner_index:
                            corner_index[key] = len(out_v)
                            out_v.append(positions[vi - 1])
                            out_n.append(normals[ni - 1] if ni else [0.0, 0.0, 0.0])
                            out_uv.append(uvs[ti - 1] if ti else [0.0, 0.0])
                            any_n |= ni > 0
                            any_uv |= ti > 0
                        corners.append(corner_index[key])
                    tris.append(corners)
                # other tags (o/g/s/usemtl/mtllib) are ignored
            except (ValueError, IndexError) as exc:
                raise SceneError(f"{path}:{lineno}: {exc}") from exc
    if not tris:
        raise SceneError(f"{path}: no faces found")
    return TriangleMesh(
        vertices=np.array(out_v, dtype=np.float64),
        triangles=np.array(tris, dtype=np.int64),
        normals=np.array(out_n, dtype=np.float64) if any_n else None,
        uvs=np.array(out_uv, dtype=np.float64) if any_uv else None,
        name=str(path),
    )


def make_box_mesh(center, half_extents, yaw_deg: float = 0.0, name: str = "box") -> TriangleMesh:
    """Axis-aligned box (optionally yawed about +z) as 12 triangles, outward normals."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half_extents, dtype=np.float64)
    signs = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
    )
    corners = signs * h
    yaw = math.radians(yaw_deg)
    rot = np.array(
        [[math.cos(yaw), -math.sin(yaw), 0.0], [math.sin(yaw), math.cos(yaw), 0.0], [0.0, 0.0, 1.0]]
    )
    corners = corners @ rot.T + c
    # index pattern: corner id = (sx>0)*4 + (sy>0)*2 + (sz>0)
    faces = [
        (0, 1, 3, 2),  # -x
        (6, 7, 5, 4),  # +x
        (4, 5, 1, 0),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (5, 7, 3, 1),  # +z
    ]
    tris = []
    for a, b, cc, d in faces:
        tris.append([a, b, cc])
        tris.append([a, cc, d])
    return TriangleMesh(vertices=corners, triangles=np.array(tris, dtype=np.int64), name=name)


def make_quad_mesh(corner, edge_u, edge_v, name: str = "quad") -> TriangleMesh:
    """Rectangle (two triangles) spanned by two edge vectors."""
    c = np.asarray(corner, dtype=np.float64)
    eu = np.asarray(edge_u, dtype=np.float64)
    ev = np.asarray(edge_v, dtype=np.float64)
    verts = np.array([c, c + eu, c + eu + ev, c + ev])
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return TriangleMesh(vertices=verts, triangles=tris, uvs=uvs, name=name)
