"""MIS path tracer and the ground-truth channel stack.

``render`` produces a :class:`ChannelSet`: HDR radiance, center-ray G-buffer
channels, per-light direct shading with and without the occlusion term plus
the visibility ratio, and (optionally) per-pixel hemispherical environment
maps on a strided grid. Renders are bit-deterministic for a fixed seed,
independent of thread count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .brdf import MicrofacetParams
from .errors import SceneError
from .geometry import Camera
from .scene import Scene

MAX_SPP = (1 << 21) - 1
MAX_BOUNCE_CAP = 60


def _thread_count() -> int:
    """Worker threads for the render pool; OR_THREADS caps it (the output is
    bit-identical regardless, the cap only bounds CPU use)."""
    limit = os.cpu_count() or 1
    env = os.environ.get("OR_THREADS")
    if env:
        try:
            return max(1, min(int(env), 64))
        except ValueError:
            return limit
    return limit


def _run_chunked(worker, total: int, args_before, args_after, chunk_arg_pos=None):
    """Run ``worker(*args_before, lo, hi, *args_after)`` over [0, total) in
    disjoint chunks on a thread pool. Workers are nogil-compiled and write to
    disjoint output rows, so the chunking cannot affect results."""
    n = min(_thread_count(), total)
    if n <= 1:
        worker(*args_before, 0, total, *args_after)
        return
    from concurrent.futures import ThreadPoolExecutor

    bounds = [total * i // n for i in range(n + 1)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [
            pool.submit(worker, *args_before, bounds[i], bounds[i + 1], *args_after)
            for i in range(n)
            if bounds[i] < bounds[i + 1]
        ]
        for f in futures:
            f.result()


@dataclass
class RenderConfig:
    """Knobs for one render job. ``max_bounces`` counts surface scattering
    events (7 matches the renderer's inter-reflection depth)."""

    spp: int = 64
    max_bounces: int = 7
    seed: int = 0
    direct_only: bool = False
    radiance: bool = True
    gbuffer: bool = True
    per_light: bool = False
    variance: bool = False
    envmaps: bool = False
    envmap_stride: int = 4
    envmap_shape: tuple[int, int] = (8, 16)   # zenith x azimuth bins
    envmap_spp: int = 1024
    light_filter: int | None = None
    occlusion: bool = True
    jitter: bool = True

    def validate(self, scene: Scene | None = None):
        if not (1 <= self.spp <= MAX_SPP):
            raise ValueError(f"spp must be in [1, {MAX_SPP}]")
        if not (0 <= self.max_bounces <= MAX_BOUNCE_CAP):
            raise ValueError(f"max_bounces must be in [0, {MAX_BOUNCE_CAP}]")
        if self.envmap_stride < 1:
            raise ValueError("envmap_stride must be >= 1")
        if self.envmap_shape[0] < 1 or self.envmap_shape[1] < 1:
            raise ValueError("envmap_shape bins must be >= 1")
        if not (1 <= self.envmap_spp <= MAX_SPP):
            raise ValueError(f"envmap_spp must be in [1, {MAX_SPP}]")
        if scene is not None and self.light_filter is not None:
            if not (0 <= self.light_filter < len(scene.lights)):
                raise SceneError(
                    f"light filter id {self.light_filter} not present in scene "
                    f"({len(scene.lights)} lights)"
                )

    @property
    def bounce_limit(self) -> int:
        return min(self.max_bounces, 1) if self.direct_only else self.max_bounces


@dataclass
class ChannelSet:
    """Rendered ground-truth stack. Every per-pixel channel shares the camera
    resolution; envmap grids are tiled (rows*htheta, cols*hphi)."""

    width: int
    height: int
    spp: int
    seed: int
    radiance: np.ndarray | None = None          # (H, W, 3)
    radiance_m2: np.ndarray | None = None       # (H, W, 3) mean of squares
    albedo: np.ndarray | None = None            # (H, W, 3)
    normal: np.ndarray | None = None            # (H, W, 3), camera space, (n+1)/2
    depth: np.ndarray | None = None             # (H, W) planar depth, meters
    roughness: np.ndarray | None = None         # (H, W)
    instance_mask: np.ndarray | None = None     # (H, W), -1 = none
    light_mask: np.ndarray | None = None        # (H, W), light id or -1
    light_ids: list[int] = field(default_factory=list)
    per_light_shading: np.ndarray | None = None      # (L, H, W, 3) with occlusion
    per_light_no_occlusion: np.ndarray | None = None  # (L, H, W, 3)
    per_light_m2: np.ndarray | None = None           # (L, H, W, 3)
    visibility: np.ndarray | None = None             # (L, H, W) in [0, 1]
    envmap_direct: np.ndarray | None = None      # (rows*ht, cols*hp, 3)
    envmap_combined: np.ndarray | None = None
    envmap_frames: np.ndarray | None = None      # (rows, cols, 3, 3): n, t1, t2
    envmap_meta: dict = field(default_factory=dict)

    def std_error(self) -> np.ndarray:
        """Per-pixel standard error of the radiance mean (needs variance)."""
        if self.radiance is None or self.radiance_m2 is None:
            raise ValueError("render with variance=True first")
        var = np.maximum(self.radiance_m2 - self.radiance ** 2, 0.0)
        return np.sqrt(var / self.spp)

    def per_light_std_error(self) -> np.ndarray:
        if self.per_light_shading is None or self.per_light_m2 is None:
            raise ValueError("render with per_light=True, variance=True first")
        var = np.maximum(self.per_light_m2 - self.per_light_shading ** 2, 0.0)
        return np.sqrt(var / self.spp)


def mis_contribution(radiance, indicator, pdf_light: float, pdf_uniform: float) -> np.ndarray:
    """Power-rule (exponent 2) combination of the two sampling strategies.

    ``indicator`` is 1 when the sample came from light sampling and 0 when it
    came from uniform hemisphere sampling; the inactive strategy's pdf may be
    0, which degenerates to the plain single-strategy estimator. A zero pdf
    on the active strategy yields zero contribution.
    """
    radiance = np.asarray(radiance, dtype=np.float64)
    if pdf_light < 0.0 or pdf_uniform < 0.0:
        raise ValueError("pdfs must be nonnegative")
    denom = pdf_light * pdf_light + pdf_uniform * pdf_uniform
    if denom == 0.0:
        return np.zeros_like(radiance)
    if indicator:
        if pdf_light == 0.0:
            return np.zeros_like(radiance)
        return (pdf_light * pdf_light / denom) * radiance / pdf_light
    if pdf_uniform == 0.0:
        return np.zeros_like(radiance)
    return (pdf_uniform * pdf_uniform / denom) * radiance / pdf_uniform


def _camera_pack(camera: Camera) -> np.ndarray:
    right, up, fwd = camera.basis()
    tanw, tanh = camera.tan_half()
    return np.concatenate([right, up, fwd, [tanw, tanh], camera.position])


def _resolve_camera(scene: Scene, camera) -> Camera:
    if isinstance(camera, Camera):
        return camera
    idx = int(camera)
    if not (0 <= idx < len(scene.cameras)):
        raise SceneError(f"camera index {idx} out of range ({len(scene.cameras)} cameras)")
    return scene.cameras[idx]


def estimate_direct(scene: Scene, position, normal, view, params: MicrofacetParams,
                    rng: np.random.Generator, occlusion: bool = True,
                    light_filter: int | None = None) -> np.ndarray:
    """One two-strategy estimate of the direct reflected radiance at a point
    (one light-strategy sample plus one hemisphere-strategy sample, combined
    with the power rule). Average many calls to converge."""
    flat = scene.flat()
    position = np.asarray(position, dtype=np.float64).reshape(3)
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    n = n / np.linalg.norm(n)
    v = np.asarray(view, dtype=np.float64).reshape(3)
    v = v / np.linalg.norm(v)
    lf = -1 if light_filter is None else int(light_filter)
    if lf >= len(scene.lights):
        raise SceneError(f"light filter id {lf} not present in scene")
    u = rng.random(6)
    r, g, b = K.estimate_direct_once(
        flat, position[0], position[1], position[2], n[0], n[1], n[2],
        v[0], v[1], v[2],
        params.albedo[0], params.albedo[1], params.albedo[2],
        params.roughness, params.f0,
        u[0], u[1], u[2], u[3], u[4], u[5], occlusion, lf,
    )
    return np.array([r, g, b])


def render(scene: Scene, camera=0, config: RenderConfig | None = None) -> ChannelSet:
    """Render the configured channel stack for one camera."""
    config = config or RenderConfig()
    config.validate(scene)
    cam = _resolve_camera(scene, camera)
    W, H = cam.width, cam.height
    if W * H >= (1 << 24):
        raise ValueError("image too large for the counter RNG (max 16.7M pixels)")
    flat = scene.flat()
    cam_arr = _camera_pack(cam)
    lf = -1 if config.light_filter is None else int(config.light_filter)

    out = ChannelSet(width=W, height=H, spp=config.spp, seed=config.seed,
                     light_ids=list(range(len(scene.lights))))

    if config.radiance:
        rad = np.zeros((H, W, 3))
        m2 = np.zeros((H, W, 3) if config.variance else (0, 0, 3))
        _run_chunked(K.render_radiance, H, (flat, cam_arr, W, H),
                     (config.spp, config.seed, config.bounce_limit, lf,
                      config.occlusion, config.jitter, config.variance, rad, m2))
        out.radiance = rad
        if config.variance:
            out.radiance_m2 = m2

    if config.gbuffer:
        albedo = np.zeros((H, W, 3))
        normal = np.zeros((H, W, 3))
        depth = np.zeros((H, W))
        rough = np.zeros((H, W))
        inst = np.zeros((H, W))
        lmask = np.zeros((H, W))
        _run_chunked(K.render_gbuffer, H, (flat, cam_arr, W, H),
                     (albedo, normal, depth, rough, inst, lmask))
        out.albedo = albedo
        out.normal = normal
        out.depth = depth
        out.roughness = rough
        out.instance_mask = inst
        out.light_mask = lmask

    if config.per_light and scene.lights:
        L = len(scene.lights)
        plw = np.zeros((L, H, W, 3))
        plwo = np.zeros((L, H, W, 3))
        plm2 = np.zeros((L, H, W, 3) if config.variance else (0, 0, 0, 3))
        _run_chunked(K.render_per_light, H, (flat, cam_arr, W, H),
                     (config.spp, config.seed, config.jitter, config.variance,
                      plw, plwo, plm2))
        out.per_light_shading = plw
        out.per_light_no_occlusion = plwo
        if config.variance:
            out.per_light_m2 = plm2
        # visibility ratio; 1 where there is no unoccluded light to block
        num = plw.sum(axis=3)
        den = plwo.sum(axis=3)
        vis = np.ones_like(den)
        np.divide(num, den, out=vis, where=den > 0.0)
        out.visibility = np.clip(vis, 0.0, 1.0)

    if config.envmaps:
        d, c, frames, meta = render_perpixel_envmaps(scene, cam, config)
        out.envmap_direct = d
        out.envmap_combined = c
        out.envmap_frames = frames
        out.envmap_meta = meta

    return out


def render_perpixel_envmaps(scene: Scene, camera=0, config: RenderConfig | None = None):
    """Hemispherical incoming-radiance maps at every ``envmap_stride``-th
    pixel's first-hit point, as tiled images.

    Returns (direct, combined, frames, meta): the direct-illumination-only
    grid, the direct+indirect grid, the per-cell shading frames (normal,
    tangent, bitangent rows) and a metadata dict describing the layout.
    """
    config = config or RenderConfig()
    config.validate(scene)
    cam = _resolve_camera(scene, camera)
    W, H = cam.width, cam.height
    flat = scene.flat()
    cam_arr = _camera_pack(cam)
    lf = -1 if config.light_filter is None else int(config.light_filter)
    stride = config.envmap_stride
    ht, hp = config.envmap_shape
    rows = (H + stride - 1) // stride
    cols = (W + stride - 1) // stride
    direct = np.zeros((rows * ht, cols * hp, 3))
    combined = np.zeros((rows * ht, cols * hp, 3))
    frames = np.zeros((rows, cols, 3, 3))
    _run_chunked(K.render_envmaps, rows * cols, (flat, cam_arr, W, H, stride),
                 (ht, hp, config.envmap_spp, config.seed, config.max_bounces,
                  lf, direct, combined, frames))
    meta = {
        "stride": stride, "theta_bins": ht, "phi_bins": hp,
        "rows": rows, "cols": cols, "frame": "local-shading",
        "spp": config.envmap_spp,
    }
    return direct, combined, frames, meta


def envmap_bin_directions(frames: np.ndarray, row: int, col: int, shape: tuple[int, int]):
    """World-space bin-center directions and solid angles for one grid cell.

    Returns (dirs (ht, hp, 3), domega (ht,)); useful for reconstructing the
    rendering equation from a per-pixel environment map.
    """
    ht, hp = shape
    n = frames[row, col, 0]
    t1 = frames[row, col, 1]
    t2 = frames[row, col, 2]
    theta_edges = np.linspace(0.0, 0.5 * np.pi, ht + 1)
    theta_c = 0.5 * (theta_edges[:-1] + theta_edges[1:])
    phi_c = (np.arange(hp) + 0.5) * (2.0 * np.pi / hp)
    st = np.sin(theta_c)[:, None]
    ct = np.cos(theta_c)[:, None]
    cp = np.cos(phi_c)[None, :]
    sp = np.sin(phi_c)[None, :]
    dirs = (
        (st * cp)[..., None] * t1
        + (st * sp)[..., None] * t2
        + np.broadcast_to(ct[..., None], (ht, hp, 1)) * n
    )
    domega = (np.cos(theta_edges[:-1]) - np.cos(theta_edges[1:])) * (2.0 * np.pi / hp)
    return dirs, domega
