"""Room layout from point clouds: RANSAC floor fitting, top-down occupancy,
automatic polygonization, opening (door/window) assignment to walls,
furniture placement resolution, and the layout evaluation metrics (corner
and edge precision/recall at a 10-pixel threshold, room IoU).

Wall indexing: wall ``i`` is the polygon edge from vertex ``i`` to vertex
``i+1`` (wrapping). Layout polygons are stored counter-clockwise, so the
interior lies to the left of every wall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LayoutError

DEFAULT_ROOM_HEIGHT = 3.0
CORNER_MATCH_PIXELS = 10.0
LABEL_DOOR = 1
LABEL_WINDOW = 2


@dataclass
class PointCloud:
    """3D points with an optional per-point integer semantic label
    (1 = door, 2 = window in the file schema)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise LayoutError("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise LayoutError("label count != point count")

    def __len__(self) -> int:
        return len(self.points)


def load_point_cloud(path) -> PointCloud:
    """ASCII ``x y z [label]`` lines; blank lines and '#' comments ignored."""
    pts, labels = [], []
    any_label = False
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise LayoutError(f"{path}:{lineno}: expected 'x y z [label]'")
            try:
                pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
                if len(parts) == 4:
                    labels.append(int(parts[3]))
                    any_label = True
                else:
                    labels.append(0)
            except ValueError as exc:
                raise LayoutError(f"{path}:{lineno}: {exc}") from exc
    if not pts:
        raise LayoutError(f"{path}: empty point cloud")
    return PointCloud(points=np.array(pts),
                      labels=np.array(labels, dtype=np.int64) if any_label else None)


# ---------------------------------------------------------------------------
# floor plane
# ---------------------------------------------------------------------------


def _plane_from_points(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, float(np.dot(n, p0))


def _refit_plane(points: np.ndarray):
    """Least-squares plane through a point set (smallest covariance axis)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    n = vt[-1]
    n = n / np.linalg.norm(n)
    return n, float(np.dot(n, centroid))


def fit_floor_plane(cloud: PointCloud, threshold: float = 0.02,
                    iterations: int = 1000, seed: int = 0,
                    max_tilt_deg: float = 10.0) -> tuple[np.ndarray, float]:
    """RANSAC fit of the horizontal floor plane.

    Candidate planes tilted more than ``max_tilt_deg`` from world up are
    rejected; the winning consensus set is refit by least squares. Returns
    (unit normal oriented toward +z, offset d) with the plane n.x = d.
    """
    pts = cloud.points
    if len(pts) < 3:
        raise LayoutError("need at least 3 points to fit a plane")
    rng = np.random.default_rng(seed)
    cos_tilt = math.cos(math.radians(max_tilt_deg))
    best_count = -1
    best_inliers = None
    for _ in range(iterations):
        idx = rng.choice(len(pts), size=3, replace=False)
        cand = _plane_from_points(pts[idx[0]], pts[idx[1]], pts[idx[2]])
        if cand is None:
            continue
        n, d = cand
        if n[2] < 0.0:
            n, d = -n, -d
        if n[2] < cos_tilt:
            continue
        dist = np.abs(pts @ n - d)
        count = int((dist <= threshold).sum())
        if count > best_count:
            best_count = count
            best_inliers = dist <= threshold
    if best_inliers is None:
        raise LayoutError("no RANSAC candidate satisfied the up-facing constraint")
    n, d = _refit_plane(pts[best_inliers])
    if n[2] < 0.0:
        n, d = -n, -d
    if n[2] < cos_tilt:
        # keep the consensus plane orientation if the refit drifted
        raise LayoutError("refit plane violates the up-facing constraint")
    return n, d


# ---------------------------------------------------------------------------
# top-down occupancy and polygonization
# ---------------------------------------------------------------------------


@dataclass
class OccupancyGrid:
    grid: np.ndarray              # (ny, nx) bool
    origin: np.ndarray            # (2,) world coords of cell (0, 0) corner
    cell: float

    def cell_center(self, iy, ix):
        return self.origin + (np.array([ix, iy], dtype=np.float64) + 0.5) * self.cell


def _plane_basis(normal: np.ndarray):
    """In-plane axes aligned with world x/y as closely as possible."""
    t1 = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    n1 = np.linalg.norm(t1)
    if n1 < 1e-9:
        t1 = np.array([0.0, 1.0, 0.0]) - normal[1] * normal
        n1 = np.linalg.norm(t1)
    t1 = t1 / n1
    t2 = np.cross(normal, t1)
    return t1, t2


def project_topdown(cloud: PointCloud, plane, cell: float = 0.05) -> OccupancyGrid:
    """Binary occupancy of the cloud projected onto the floor plane."""
    if cell <= 0.0:
        raise ValueError("cell size must be positive")
    normal, d = plane
    normal = np.asarray(normal, dtype=np.float64)
    t1, t2 = _plane_basis(normal)
    coords = np.stack([cloud.points @ t1, cloud.points @ t2], axis=1)
    lo = coords.min(axis=0)
    extent = coords.max(axis=0) - lo
    # floor+1 rather than ceil so a point exactly on the far boundary still
    # lands in its own cell (two points 1 m apart at 0.5 m cells sit 2 apart)
    nx = int(extent[0] / cell) + 1
    ny = int(extent[1] / cell) + 1
    ix = np.minimum(((coords[:, 0] - lo[0]) / cell).astype(np.int64), nx - 1)
    iy = np.minimum(((coords[:, 1] - lo[1]) / cell).astype(np.int64), ny - 1)
    grid = np.zeros((ny, nx), dtype=bool)
    grid[iy, ix] = True
    return OccupancyGrid(grid=grid, origin=lo, cell=cell)


def _snap_axis_edges(vertices: np.ndarray, max_angle_deg: float = 5.0) -> np.ndarray:
    """Make near-axis edges exactly axis-aligned by averaging the off-axis
    coordinate of their endpoints (one pass)."""
    v = vertices.astype(np.float64).copy()
    n = len(v)
    tan_max = math.tan(math.radians(max_angle_deg))
    for i in range(n):
        a, b = i, (i + 1) % n
        dx = v[b, 0] - v[a, 0]
        dy = v[b, 1] - v[a, 1]
        if abs(dx) >= abs(dy):
            if abs(dx) > 1e-12 and abs(dy / dx) <= tan_max:
                y = 0.5 * (v[a, 1] + v[b, 1])
                v[a, 1] = v[b, 1] = y
        else:
            if abs(dy) > 1e-12 and abs(dx / dy) <= tan_max:
                x = 0.5 * (v[a, 0] + v[b, 0])
                v[a, 0] = v[b, 0] = x
    return v


def polygonize_occupancy(occ: OccupancyGrid, simplify_cells: float = 2.0,
                         snap_deg: float = 5.0) -> np.ndarray:
    """Largest-contour polygon of an occupancy grid, Douglas-Peucker
    simplified (tolerance ``simplify_cells`` cells) with near-axis edges
    snapped. Returns CCW (n, 2) world coordinates."""
    import cv2

    img = occ.grid.astype(np.uint8)
    contours, _ = cv2.findContours(img, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    if not contours:
        raise LayoutError("empty occupancy grid")
    contour = max(contours, key=cv2.contourArea)
    approx = cv2.approxPolyDP(contour, simplify_cells, True)
    px = approx[:, 0, :].astype(np.float64)  # (n, 2) as (x=col, y=row)
    if len(px) < 3:
        raise LayoutError("contour degenerated during simplification")
    world = occ.origin + (px + 0.5) * occ.cell
    world = _snap_axis_edges(world, snap_deg)
    # enforce CCW
    x, y = world[:, 0], world[:, 1]
    if 0.5 * (x * np.roll(y, -1) - np.roll(x, -1) * y).sum() < 0.0:
        world = world[::-1]
    return world


# ---------------------------------------------------------------------------
# layout polygon, openings, placement
# ---------------------------------------------------------------------------


def _segments_intersect(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    o1, o2 = orient(p, q, r), orient(p, q, s)
    o3, o4 = orient(r, s, p), orient(r, s, q)
    return (o1 * o2 < 0.0) and (o3 * o4 < 0.0)


@dataclass
class LayoutPolygon:
    """Floor polygon (CCW), floor plane height, constant room height."""

    vertices: np.ndarray
    floor_z: float = 0.0
    height: float = DEFAULT_ROOM_HEIGHT

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise LayoutError("layout polygon needs at least 3 2D vertices")
        if not np.isfinite(v).all():
            raise LayoutError("layout polygon has non-finite vertices")
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * float((x * np.roll(y, -1) - np.roll(x, -1) * y).sum())
        if abs(area) < 1e-12:
            raise LayoutError("layout polygon is degenerate (zero area)")
        if area < 0.0:
            v = v[::-1].copy()
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if abs(i - j) in (0, 1) or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise LayoutError("layout polygon is self-intersecting")
        if self.height <= 0.0:
            raise LayoutError("room height must be positive")
        self.vertices = v

    @property
    def n_walls(self) -> int:
        return len(self.vertices)

    def wall(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        return v[i], v[(i + 1) % len(v)]

    def wall_length(self, i: int) -> float:
        a, b = self.wall(i)
        return float(np.linalg.norm(b - a))

    def contains(self, xy) -> bool:
        x, y = float(xy[0]), float(xy[1])
        v = self.vertices
        inside = False
        n = len(v)
        for i in range(n):
            x1, y1 = v[i]
            x2, y2 = v[(i + 1) % n]
            if (y1 > y) != (y2 > y):
                xi = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
                if x < xi:
                    inside = not inside
        return inside

    def to_json(self, path=None) -> dict:
        doc = {"vertices": self.vertices.tolist(), "floor_z": self.floor_z,
               "height": self.height}
        if path is not None:
            Path(path).write_text(json.dumps(doc, indent=2) + "\n")
        return doc

    @classmethod
    def from_json(cls, path_or_doc) -> "LayoutPolygon":
        if isinstance(path_or_doc, (str, Path)):
            doc = json.loads(Path(path_or_doc).read_text())
        else:
            doc = path_or_doc
        return cls(vertices=np.asarray(doc["vertices"], dtype=np.float64),
                   floor_z=float(doc.get("floor_z", 0.0)),
                   height=float(doc.get("height", DEFAULT_ROOM_HEIGHT)))


def fit_layout(cloud: PointCloud, cell: float = 0.05, threshold: float = 0.02,
               iterations: int = 1000, seed: int = 0,
               height: float = DEFAULT_ROOM_HEIGHT) -> LayoutPolygon:
    """Automatic layout: RANSAC floor plane, top-down projection,
    polygonization. Room height is constant (3 m by default)."""
    normal, d = fit_floor_plane(cloud, threshold=threshold, iterations=iterations, seed=seed)
    occ = project_topdown(cloud, (normal, d), cell=cell)
    vertices = polygonize_occupancy(occ)
    floor_z = d / normal[2] if abs(normal[2]) > 1e-9 else d
    return LayoutPolygon(vertices=vertices, floor_z=float(floor_z), height=height)


@dataclass
class WallSegment:
    """An opening on a wall: 1D interval along the wall direction."""

    wall_index: int
    start: float
    end: float
    kind: str                 # "door" | "window"
    cad_id: str = ""

    @property
    def width(self) -> float:
        return self.end - self.start


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom < 1e-18 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    proj = a + t * ab
    return float(np.linalg.norm(p - proj)), t


def assign_openings(cloud: PointCloud, layout: LayoutPolygon,
                    segment_width: float = 0.5, min_points: int = 20) -> list[WallSegment]:
    """Project door/window-labeled points to their nearest wall, bin each
    wall at ``segment_width``, keep bins with at least ``min_points`` points
    and merge adjacent kept bins into one segment per opening type.

    Points equidistant to several walls go to the lowest wall index.
    """
    if segment_width <= 0.0:
        raise ValueError("segment_width must be positive")
    if cloud.labels is None:
        return []
    openings: list[WallSegment] = []
    counters: dict[tuple[int, int], np.ndarray] = {}
    nbins: dict[int, int] = {}
    for wall in range(layout.n_walls):
        length = layout.wall_length(wall)
        nbins[wall] = max(1, int(math.ceil(length / segment_width - 1e-9)))
    for kind_label in (LABEL_DOOR, LABEL_WINDOW):
        sel = cloud.labels == kind_label
        if not sel.any():
            continue
        pts2 = cloud.points[sel][:, :2]
        counts = {w: np.zeros(nbins[w], dtype=np.int64) for w in range(layout.n_walls)}
        for p in pts2:
            best_d = np.inf
            best_w = 0
            best_t = 0.0
            for w in range(layout.n_walls):
                a, b = layout.wall(w)
                dist, t = _point_segment_distance(p, a, b)
                if dist < best_d - 1e-12:
                    best_d, best_w, best_t = dist, w, t
            length = layout.wall_length(best_w)
            b_idx = min(int(best_t * length / segment_width), nbins[best_w] - 1)
            counts[best_w][b_idx] += 1
        for w in range(layout.n_walls):
            kept = counts[w] >= min_points
            i = 0
            while i < len(kept):
                if not kept[i]:
                    i += 1
                    continue
                j = i
                while j + 1 < len(kept) and kept[j + 1]:
                    j += 1
                length = layout.wall_length(w)
                kind = "door" if kind_label == LABEL_DOOR else "window"
                openings.append(WallSegment(
                    wall_index=w,
                    start=i * segment_width,
                    end=min((j + 1) * segment_width, length),
                    kind=kind,
                    cad_id=f"{kind}_{len(openings)}",
                ))
                i = j + 1
    return openings


@dataclass
class PlacedObject:
    """Oriented bounding box: center, half extents, yaw about +z."""

    center: np.ndarray
    half_extents: np.ndarray
    yaw_deg: float = 0.0
    object_id: str = ""

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if (self.half_extents <= 0.0).any():
            raise LayoutError(f"object '{self.object_id}': half extents must be positive")

    def footprint(self) -> np.ndarray:
        """The 4 bottom corners in the xy plane, (4, 2)."""
        yaw = math.radians(self.yaw_deg)
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s], [s, c]])
        h = self.half_extents
        corners = np.array([[-h[0], -h[1]], [h[0], -h[1]], [h[0], h[1]], [-h[0], h[1]]])
        return corners @ rot.T + self.center[:2]


def resolve_placement(objects: list[PlacedObject], layout: LayoutPolygon,
                      max_passes: int = 8) -> list[PlacedObject]:
    """Settle objects onto the floor and push wall-penetrating boxes back
    into the room (translations only, along floor normal / wall normals).

    Object-object overlaps are reported in the returned objects' order but
    not resolved. Idempotent: a second application is the identity.
    """
    resolved = []
    for obj in objects:
        c = obj.center.copy()
        # floor contact: min z of the box must equal the floor height
        c[2] += layout.floor_z - (c[2] - obj.half_extents[2])
        moved = PlacedObject(center=c, half_extents=obj.half_extents,
                             yaw_deg=obj.yaw_deg, object_id=obj.object_id)
        for _ in range(max_passes):
            worst = 0.0
            for w in range(layout.n_walls):
                a, b = layout.wall(w)
                edge = b - a
                length = np.linalg.norm(edge)
                if length < 1e-12:
                    continue
                direction = edge / length
                inward = np.array([-direction[1], direction[0]])
                # penetration: how far any corner sits outside this wall line
                rel = moved.footprint() - a
                depth = float(np.maximum(-(rel @ inward), 0.0).max())
                if depth > 1e-9:
                    c = moved.center.copy()
                    c[:2] += inward * depth
                    moved = PlacedObject(center=c, half_extents=moved.half_extents,
                                         yaw_deg=moved.yaw_deg, object_id=moved.object_id)
                    worst = max(worst, depth)
            if worst <= 1e-9:
                break
        else:
            raise LayoutError(
                f"object '{obj.object_id}' cannot fit the room (larger than the layout)")
        if not layout.contains(moved.center[:2]):
            raise LayoutError(
                f"object '{obj.object_id}' cannot fit the room (larger than the layout)")
        resolved.append(moved)
    return resolved


def report_intersections(objects: list[PlacedObject]) -> list[tuple[str, str]]:
    """Pairs of objects whose footprints overlap (separating-axis test on
    the yawed rectangles, z-intervals must overlap too)."""
    pairs = []
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            a, b = objects[i], objects[j]
            az = (a.center[2] - a.half_extents[2], a.center[2] + a.half_extents[2])
            bz = (b.center[2] - b.half_extents[2], b.center[2] + b.half_extents[2])
            if az[1] <= bz[0] or bz[1] <= az[0]:
                continue
            if _rects_overlap(a.footprint(), b.footprint()):
                pairs.append((a.object_id, b.object_id))
    return pairs


def _rects_overlap(ra: np.ndarray, rb: np.ndarray) -> bool:
    for rect in (ra, rb):
        for k in range(4):
            edge = rect[(k + 1) % 4] - rect[k]
            axis = np.array([-edge[1], edge[0]])
            pa = ra @ axis
            pb = rb @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------


@dataclass
class LayoutMetrics:
    corner_precision: float
    corner_recall: float
    edge_precision: float
    edge_recall: float
    iou: float

    def to_json(self) -> dict:
        return {
            "corner_precision": self.corner_precision,
            "corner_recall": self.corner_recall,
            "edge_precision": self.edge_precision,
            "edge_recall": self.edge_recall,
            "iou": self.iou,
        }


def rasterize_polygon(vertices: np.ndarray, origin: np.ndarray, shape: tuple[int, int],
                      pixels_per_meter: float) -> np.ndarray:
    """Even-odd fill at pixel centers; (ny, nx) bool mask."""
    ny, nx = shape
    xs = origin[0] + (np.arange(nx) + 0.5) / pixels_per_meter
    ys = origin[1] + (np.arange(ny) + 0.5) / pixels_per_meter
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros(shape, dtype=bool)
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        cond = (y1 > Y) != (y2 > Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (Y - y1) / (y2 - y1) * (x2 - x1)
        inside ^= cond & (X < xi)
    return inside


def _match_corners(pred_px: np.ndarray, gt_px: np.ndarray,
                   threshold: float = CORNER_MATCH_PIXELS):
    """Greedy one-to-one matching by ascending distance; a pair matches when
    its distance is within ``threshold`` pixels (inclusive)."""
    if len(pred_px) == 0 or len(gt_px) == 0:
        return {}
    d = np.linalg.norm(pred_px[:, None, :] - gt_px[None, :, :], axis=2)
    order = [(d[i, j], i, j) for i in range(len(pred_px)) for j in range(len(gt_px))]
    order.sort(key=lambda t: (t[0], t[1], t[2]))
    matched_pred: dict[int, int] = {}
    used_gt: set[int] = set()
    for dist, i, j in order:
        if dist > threshold:
            break
        if i in matched_pred or j in used_gt:
            continue
        matched_pred[i] = j
        used_gt.add(j)
    return matched_pred


def _edge_set(n: int) -> set[tuple[int, int]]:
    return {tuple(sorted((i, (i + 1) % n))) for i in range(n)}


def eval_layout(predicted: LayoutPolygon, ground_truth: LayoutPolygon,
                pixels_per_meter: float = 25.0) -> LayoutMetrics:
    """Corner/edge precision and recall plus room IoU, on a raster at
    ``pixels_per_meter``.

    A predicted corner is correct when the nearest unmatched ground-truth
    corner lies within 10 pixels; an edge is valid when both endpoints match
    and the matched pair is a ground-truth edge. Swapping the arguments
    swaps precision and recall exactly.
    """
    if pixels_per_meter <= 0.0:
        raise ValueError("pixels_per_meter must be positive")
    pred = predicted.vertices * pixels_per_meter
    gt = ground_truth.vertices * pixels_per_meter
    match = _match_corners(pred, gt)
    n_pred, n_gt = len(pred), len(gt)
    corner_precision = len(match) / n_pred
    corner_recall = len(match) / n_gt
    gt_edges = _edge_set(n_gt)
    valid_pred_edges = 0
    for i in range(n_pred):
        j = (i + 1) % n_pred
        if i in match and j in match and tuple(sorted((match[i], match[j]))) in gt_edges:
            valid_pred_edges += 1
    pred_edges = _edge_set(n_pred)
    rmatch = {j: i for i, j in match.items()}
    valid_gt_edges = 0
    for i in range(n_gt):
        j = (i + 1) % n_gt
        if i in rmatch and j in rmatch and tuple(sorted((rmatch[i], rmatch[j]))) in pred_edges:
            valid_gt_edges += 1
    edge_precision = valid_pred_edges / n_pred
    edge_recall = valid_gt_edges / n_gt
    # IoU over a shared raster
    allv = np.concatenate([predicted.vertices, ground_truth.vertices])
    origin = allv.min(axis=0) - 2.0 / pixels_per_meter
    extent = allv.max(axis=0) - origin + 4.0 / pixels_per_meter
    nx = max(1, int(math.ceil(extent[0] * pixels_per_meter)))
    ny = max(1, int(math.ceil(extent[1] * pixels_per_meter)))
    mask_p = rasterize_polygon(predicted.vertices, origin, (ny, nx), pixels_per_meter)
    mask_g = rasterize_polygon(ground_truth.vertices, origin, (ny, nx), pixels_per_meter)
    union = np.logical_or(mask_p, mask_g).sum()
    inter = np.logical_and(mask_p, mask_g).sum()
    iou = float(inter) / float(union) if union else 0.0
    return LayoutMetrics(
        corner_precision=corner_precision, corner_recall=corner_recall,
        edge_precision=edge_precision, edge_recall=edge_recall, iou=iou,
    )
