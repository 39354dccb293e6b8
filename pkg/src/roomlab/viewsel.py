"""View selection: sample candidate camera poses along room walls and rank
them by a geometry-richness score.

The score is the sum of absolute forward-difference gradients of the normal
map (all three channels) plus 0.3 times the sum of log(depth + 1) over all
pixels; views with higher scores see more geometric detail at a larger
depth range. Candidates are scored on fixed-resolution depth/normal renders
so scores are comparable across views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutError
from .geometry import Camera
from .integrator import RenderConfig, render
from .scene import Scene

SCORE_WIDTH = 160
SCORE_HEIGHT = 120
DEPTH_WEIGHT = 0.3
DEFAULT_INSET = 0.3
DEFAULT_HEIGHT = 1.5


@dataclass
class ViewCandidate:
    camera: Camera
    depth: np.ndarray | None = None     # (H, W) meters
    normals: np.ndarray | None = None   # (H, W, 3) raw camera-space normals
    score: float | None = None
    index: int = -1


def normal_gradient_sum(normals: np.ndarray) -> float:
    """Sum of |forward difference| over x and y for all three channels.

    Borders are clamped: the last column has no x-difference and the last
    row no y-difference.
    """
    n = np.asarray(normals, dtype=np.float64)
    if n.ndim == 2:
        n = n[:, :, None]
    gx = np.abs(np.diff(n, axis=1)).sum()
    gy = np.abs(np.diff(n, axis=0)).sum()
    return float(gx + gy)


def score_view(candidate: ViewCandidate) -> float:
    """Gradient term plus depth term over every pixel (natural log)."""
    if candidate.depth is None or candidate.normals is None:
        raise ValueError("candidate needs rendered depth and normal maps")
    depth_term = np.log1p(np.maximum(candidate.depth, 0.0)).sum()
    return normal_gradient_sum(candidate.normals) + DEPTH_WEIGHT * float(depth_term)


def _polygon_area_centroid(vertices: np.ndarray) -> tuple[float, np.ndarray]:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-12:
        raise LayoutError("degenerate polygon (zero area)")
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def sample_wall_views(polygon, spacing: float = 0.5, camera_height: float = DEFAULT_HEIGHT,
                      fov_deg: float = 60.0, inset: float = DEFAULT_INSET,
                      width: int = SCORE_WIDTH, height: int = SCORE_HEIGHT) -> list[Camera]:
    """Camera poses every ``spacing`` meters along each wall of a CCW floor
    polygon, inset toward the interior, at ``camera_height``, looking at the
    room centroid at the same height."""
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    verts = np.asarray(polygon, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise LayoutError("polygon must be (n, 2) with n >= 3")
    area, centroid = _polygon_area_centroid(verts)
    if area < 0.0:  # clockwise input: flip so interior is left of each edge
        verts = verts[::-1]
    cameras = []
    n = len(verts)
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        edge = b - a
        length = float(np.linalg.norm(edge))
        if length < 1e-12:
            continue
        direction = edge / length
        inward = np.array([-direction[1], direction[0]])
        count = int(length / spacing + 1e-9)
        for k in range(count):
            t = (k + 0.5) * spacing
            pos2 = a + direction * t + inward * inset
            position = np.array([pos2[0], pos2[1], camera_height])
            target = np.array([centroid[0], centroid[1], camera_height])
            look = target - position
            if np.linalg.norm(look) < 1e-9:
                continue
            cameras.append(Camera(position=position, direction=look,
                                  up=np.array([0.0, 0.0, 1.0]), fov_deg=fov_deg,
                                  width=width, height=height))
    return cameras


def render_depth_normals(scene: Scene, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Depth plus raw camera-space normals for scoring (decoded from the
    G-buffer's (n+1)/2 encoding; miss pixels give depth 0, normal 0)."""
    channels = render(scene, camera, RenderConfig(spp=1, radiance=False, gbuffer=True))
    normals = channels.normal * 2.0 - 1.0
    return channels.depth, normals


def rank_views(scene: Scene, candidates: list[Camera], k: int) -> list[ViewCandidate]:
    """Score every candidate and return the best ``k``, highest first.

    Ties keep the original candidate order (stable sort on the index).
    """
    if not candidates:
        raise ValueError("empty candidate list")
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = []
    for idx, cam in enumerate(candidates):
        depth, normals = render_depth_normals(scene, cam)
        cand = ViewCandidate(camera=cam, depth=depth, normals=normals, index=idx)
        cand.score = score_view(cand)
        scored.append(cand)
    scored.sort(key=lambda c: (-c.score, c.index))
    return scored[: min(k, len(scored))]
