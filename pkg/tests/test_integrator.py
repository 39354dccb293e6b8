"""MIS combination, direct-light estimator, render channels, visibility,
per-pixel environment maps."""

import math

import numpy as np
import pytest
from oracles import hemisphere_constant_env, rect_light_radiance

import roomlab as rl
from conftest import constant_env_window_scene, plane_lamp_scene
from roomlab.errors import SceneError
from roomlab.geometry import Camera, make_box_mesh, make_quad_mesh
from roomlab.integrator import RenderConfig, envmap_bin_directions, mis_contribution
from roomlab.lights import LampLight, blackbody_rgb
from roomlab.scene import Scene, SvBrdfMaterial


def test_mis_contribution_arithmetic():
    L = np.array([1.0, 2.0, 4.0])
    # equal pdfs: weight one half
    assert np.allclose(mis_contribution(L, 1, 2.0, 2.0), L / 4.0)
    # I=1, P_L=3, P_U=1: (9/10) * L / 3
    assert np.allclose(mis_contribution(L, 1, 3.0, 1.0), 0.3 * L)
    # degenerate: only the hemisphere strategy exists
    p_u = 1.0 / (2.0 * math.pi)
    assert np.allclose(mis_contribution(L, 0, 0.0, p_u), 2.0 * math.pi * L)
    # defensive zero on the active strategy
    assert np.allclose(mis_contribution(L, 1, 0.0, p_u), 0.0)
    assert np.allclose(mis_contribution(L, 0, 1.0, 0.0), 0.0)


def test_estimate_direct_no_lights():
    plane = make_quad_mesh([-1, -1, 0], [2, 0, 0], [0, 2, 0], name="p")
    scene = Scene(meshes=[plane], materials=[SvBrdfMaterial(name="m")],
                  mesh_material=[0], lights=[], cameras=[])
    rng = np.random.default_rng(0)
    params = rl.MicrofacetParams([0.5, 0.5, 0.5], 0.5)
    est = rl.estimate_direct(scene, [0, 0, 0], [0, 0, 1], [0, 0, 1], params, rng)
    assert np.allclose(est, 0.0)


def test_estimate_direct_constant_env_matches_quadrature():
    """Gray plane under an all-covering constant-radiance window: the mean
    estimate must match the hemispherical quadrature of f * L0 * cos."""
    scene = constant_env_window_scene(radiance=(1.0, 0.8, 0.6), roughness=0.6, albedo=0.5)
    rng = np.random.default_rng(42)
    params = rl.MicrofacetParams([0.5, 0.5, 0.5], 0.6)
    view = np.array([0.3, -0.2, 0.93])
    view /= np.linalg.norm(view)
    n = 4096
    total = np.zeros(3)
    for _ in range(n):
        total += rl.estimate_direct(scene, [0, 0, 0], [0, 0, 1], view, params, rng)
    mean = total / n
    oracle = hemisphere_constant_env([0.5] * 3, 0.6, [0, 0, 1], view, [1.0, 0.8, 0.6])
    assert np.allclose(mean, oracle, rtol=0.02)


def _two_lamp_scene():
    plane = make_quad_mesh([-4, -4, 0], [8, 0, 0], [0, 8, 0], name="floor")
    mat = SvBrdfMaterial(name="gray", albedo=[0.5, 0.5, 0.5], roughness=0.7)
    lamps = [
        LampLight(center=[-0.7, 0.2, 1.2], half_extents=[0.15, 0.1, 0.0],
                  temperature=5000, intensity=6.0),
        LampLight(center=[0.8, -0.3, 0.9], half_extents=[0.1, 0.18, 0.0],
                  temperature=7000, intensity=4.0),
    ]
    cam = Camera.looking_at([0.9, -0.9, 0.7], [0, 0.3, 0], fov_deg=55, width=48, height=48)
    return Scene(meshes=[plane], materials=[mat], mesh_material=[0],
                 lights=lamps, cameras=[cam])


def test_estimate_direct_filter_linearity():
    """Sum of single-light estimates equals the unfiltered estimate in
    expectation (within 3 sigma over 10^4 trials)."""
    scene = _two_lamp_scene()
    rng = np.random.default_rng(7)
    params = rl.MicrofacetParams([0.5, 0.5, 0.5], 0.7)
    point, normal, view = [0.1, 0.1, 0.0], [0, 0, 1], [0, 0, 1]
    n = 10_000
    diffs = np.zeros((n, 3))
    for i in range(n):
        both = rl.estimate_direct(scene, point, normal, view, params, rng)
        only0 = rl.estimate_direct(scene, point, normal, view, params, rng, light_filter=0)
        only1 = rl.estimate_direct(scene, point, normal, view, params, rng, light_filter=1)
        diffs[i] = only0 + only1 - both
    mean = diffs.mean(axis=0)
    sem = diffs.std(axis=0, ddof=1) / math.sqrt(n)
    assert (np.abs(mean) <= 3.0 * sem + 1e-12).all()


def test_render_no_lights_black_but_gbuffer_populated():
    plane = make_quad_mesh([-2, -2, 0], [4, 0, 0], [0, 4, 0], name="floor")
    cam = Camera.looking_at([0, -1, 1], [0, 0.5, 0], fov_deg=60, width=16, height=16)
    scene = Scene(meshes=[plane], materials=[SvBrdfMaterial(name="m", albedo=[0.4, 0.5, 0.6])],
                  mesh_material=[0], lights=[], cameras=[cam])
    cs = rl.render(scene, cam, RenderConfig(spp=1))
    assert np.allclose(cs.radiance, 0.0)
    assert cs.depth.max() > 0.0
    hit = cs.instance_mask >= 0
    assert hit.any()
    assert np.allclose(cs.albedo[hit], [0.4, 0.5, 0.6])


def test_render_deterministic_same_seed():
    scene = plane_lamp_scene()
    cfg = RenderConfig(spp=32, seed=123, per_light=True)
    a = rl.render(scene, 0, cfg)
    b = rl.render(scene, 0, cfg)
    assert np.array_equal(a.radiance, b.radiance)
    assert np.array_equal(a.per_light_shading, b.per_light_shading)
    c = rl.render(scene, 0, RenderConfig(spp=32, seed=124))
    assert not np.array_equal(a.radiance, c.radiance)


def test_render_thread_count_invariance(monkeypatch):
    scene = plane_lamp_scene()
    cfg = RenderConfig(spp=16, seed=5)
    images = []
    for threads in ("1", "2", "3"):
        monkeypatch.setenv("OR_THREADS", threads)
        images.append(rl.render(scene, 0, cfg).radiance)
    assert np.array_equal(images[0], images[1])
    assert np.array_equal(images[0], images[2])


def test_light_pixel_exact_radiance_at_1spp():
    """A pixel looking straight at a lamp reports the lamp radiance exactly."""
    lamp = LampLight(center=[0, 0, 0], half_extents=[1.0, 1.0, 0.1],
                     temperature=6000, intensity=3.0)
    cam = Camera(position=[0, 0, 1.0], direction=[0, 0, -1], up=[0, 1, 0],
                 fov_deg=40, width=8, height=8)
    scene = Scene(meshes=[], materials=[], mesh_material=[], lights=[lamp], cameras=[cam])
    cs = rl.render(scene, cam, RenderConfig(spp=1, seed=9))
    expected = blackbody_rgb(6000) * 3.0
    assert np.allclose(cs.radiance, expected[None, None, :], rtol=0, atol=0)
    assert np.all(cs.light_mask == 0)


def test_radiance_monotone_in_bounces():
    cornell_like = _cornell_small()
    means = []
    for k in (0, 1, 2, 4, 7):
        cs = rl.render(cornell_like, 0, RenderConfig(spp=196, seed=3, max_bounces=k))
        means.append(cs.radiance.mean())
    for a, b in zip(means, means[1:]):
        assert a <= b * (1.0 + 1e-9) + 1e-12
    # indirect light must actually contribute in an enclosed room
    assert means[-1] > means[1] * 1.02


def _cornell_small():
    quads = [
        make_quad_mesh([0, 0, 0], [1, 0, 0], [0, 1, 0], name="floor"),
        make_quad_mesh([0, 0, 1], [0, 1, 0], [1, 0, 0], name="ceiling"),
        make_quad_mesh([0, 1, 0], [1, 0, 0], [0, 0, 1], name="back"),
        make_quad_mesh([0, 0, 0], [0, 1, 0], [0, 0, 1], name="left"),
        make_quad_mesh([1, 0, 0], [0, 0, 1], [0, 1, 0], name="right"),
    ]
    mat = SvBrdfMaterial(name="white", albedo=[0.7, 0.7, 0.7], roughness=0.9)
    lamp = LampLight(center=[0.5, 0.5, 0.98], half_extents=[0.15, 0.12, 0.0],
                     temperature=6500, intensity=6.0)
    cam = Camera.looking_at([0.5, 0.08, 0.5], [0.5, 1, 0.5], fov_deg=70,
                            width=24, height=24)
    return Scene(meshes=quads, materials=[mat], mesh_material=[0] * 5,
                 lights=[lamp], cameras=[cam])


def plane_pixel_oracle(cam, albedo, rough, rect_center, rect_half, emit,
                       subgrid: int = 2):
    """Quadrature oracle for every pixel of a camera above the z=0 plane lit
    by a horizontal rectangle: pixel value approximated as the mean over a
    subpixel grid of analytic plane intersections."""
    right, up, fwd = cam.basis()
    tanw, tanh = cam.tan_half()
    W, H = cam.width, cam.height
    offsets = (np.arange(subgrid) + 0.5) / subgrid
    acc = np.zeros((H * W, 3))
    for oy in offsets:
        for ox in offsets:
            xs = (2.0 * (np.arange(W) + ox) / W - 1.0) * tanw
            ys = (1.0 - 2.0 * (np.arange(H) + oy) / H) * tanh
            X, Y = np.meshgrid(xs, ys)
            dirs = fwd[None, None, :] + X[..., None] * right + Y[..., None] * up
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
            dirs = dirs.reshape(-1, 3)
            t = -cam.position[2] / dirs[:, 2]
            pts = cam.position[None, :] + dirs * t[:, None]
            acc += rect_light_radiance(pts, -dirs, [0, 0, 1], [albedo] * 3, rough,
                                       rect_center=rect_center, rect_half=rect_half,
                                       emit_rgb=emit)
    return acc / (subgrid * subgrid)


def test_mis_unbiased_on_plane_lamp_fixture():
    """Small version of the unbiasedness check: rendered pixels against the
    rectangle-emitter quadrature oracle."""
    scene = plane_lamp_scene(lamp_half=(0.15, 0.15, 0.0), lamp_z=1.0,
                             intensity=10.0, roughness=0.6, albedo=0.5,
                             cam_kw={"position": [0.6, -0.6, 1.2], "target": [0, 0, 0],
                                     "fov_deg": 45, "width": 32, "height": 32})
    cam = scene.cameras[0]
    cs = rl.render(scene, cam, RenderConfig(spp=2048, seed=11))
    emit = blackbody_rgb(6000) * 10.0
    oracle = plane_pixel_oracle(cam, 0.5, 0.6, (0.0, 0.0, 1.0), (0.15, 0.15), emit)
    rendered = cs.radiance.reshape(-1, 3)
    rel = np.abs(rendered - oracle).sum(1) / oracle.sum(1)
    assert np.percentile(rel, 95) < 0.02


def _first_hit_points(cam, cs):
    right, up, fwd = cam.basis()
    tanw, tanh = cam.tan_half()
    H, W = cs.depth.shape
    xs = (2.0 * (np.arange(W) + 0.5) / W - 1.0) * tanw
    ys = (1.0 - 2.0 * (np.arange(H) + 0.5) / H) * tanh
    X, Y = np.meshgrid(xs, ys)
    dirs = fwd[None, None, :] + X[..., None] * right + Y[..., None] * up
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    t = cs.depth / np.maximum(dirs @ fwd, 1e-12)
    pts = cam.position[None, None, :] + dirs * t[..., None]
    mask = (cs.instance_mask >= 0).reshape(-1)
    return pts.reshape(-1, 3)[mask], -dirs.reshape(-1, 3)[mask], mask


def _occluder_scene():
    plane = make_quad_mesh([-3, -3, 0], [6, 0, 0], [0, 6, 0], name="floor")
    occ = make_quad_mesh([-0.5, -0.5, 1.0], [1, 0, 0], [0, 1, 0], name="occluder")
    mat = SvBrdfMaterial(name="gray", albedo=[0.6, 0.6, 0.6], roughness=0.8)
    lamp = LampLight(center=[0, 0, 2.0], half_extents=[0.1, 0.1, 0.0],
                     temperature=6000, intensity=20.0)
    cam = Camera.looking_at([0, -1.6, 0.85], [0, 0.35, 0], fov_deg=46,
                            width=48, height=48)
    return Scene(meshes=[plane, occ], materials=[mat], mesh_material=[0, 0],
                 lights=[lamp], cameras=[cam])


def test_visibility_umbra_and_lit_regions():
    """Square lamp over a square occluder: the analytic umbra (half-width
    2*0.5 - 0.1 = 0.9 at the floor) has visibility exactly 0, the fully lit
    region (outside half-width 1.1) exactly 1."""
    scene = _occluder_scene()
    cam = scene.cameras[0]
    # guard: no camera ray may reach the occluder plane going upward
    right, up, fwd = cam.basis()
    tanw, tanh = cam.tan_half()
    corners = [fwd + sx * tanw * right + sy * tanh * up for sx in (-1, 1) for sy in (-1, 1)]
    assert all(c[2] < 0.0 for c in corners)
    cs = rl.render(scene, cam, RenderConfig(spp=256, seed=2, per_light=True))
    pts, _, mask = _first_hit_points(cam, cs)
    vis = cs.visibility[0].reshape(-1)[mask]
    floor = pts[:, 2] < 1e-6  # floor hits only (occluder is never seen)
    assert floor.all()
    inner = np.maximum(np.abs(pts[:, 0]), np.abs(pts[:, 1])) < 0.85
    outer = (np.maximum(np.abs(pts[:, 0]), np.abs(pts[:, 1])) > 1.15) & \
            (np.maximum(np.abs(pts[:, 0]), np.abs(pts[:, 1])) < 2.8)
    assert inner.sum() > 20 and outer.sum() > 20
    assert np.max(np.abs(vis[inner] - 0.0)) <= 0.02
    assert np.max(np.abs(vis[outer] - 1.0)) <= 0.02
    assert (vis >= 0.0).all() and (vis <= 1.0).all()
    # with-occlusion never exceeds without-occlusion, samplewise by design
    assert (cs.per_light_shading <= cs.per_light_no_occlusion + 1e-12).all()


def test_per_light_additivity_small():
    """Sum of per-light direct shading equals the direct-only radiance in
    expectation (99% of pixels within 3 sigma, none beyond 5 sigma)."""
    scene = _two_lamp_scene()
    cfg = RenderConfig(spp=512, seed=21, per_light=True, variance=True, direct_only=True)
    cs = rl.render(scene, 0, cfg)
    total = cs.per_light_shading.sum(axis=0)
    diff = total - cs.radiance
    sigma = np.sqrt((cs.per_light_std_error() ** 2).sum(axis=0) + cs.std_error() ** 2)
    sigma = np.maximum(sigma, 1e-9)
    surf = (cs.instance_mask >= 0)
    ratio = (np.abs(diff) / sigma)[surf]
    assert (ratio <= 3.0).mean() > 0.99
    assert ratio.max() <= 5.0


def test_render_light_filter_validation():
    scene = plane_lamp_scene()
    with pytest.raises(SceneError, match="filter"):
        rl.render(scene, 0, RenderConfig(spp=1, light_filter=5))


def test_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(spp=0).validate()
    with pytest.raises(ValueError):
        RenderConfig(max_bounces=100).validate()
    with pytest.raises(ValueError):
        RenderConfig(envmap_stride=0).validate()


def test_envmap_constant_field():
    """Under an all-covering constant environment every texel reads L0."""
    scene = constant_env_window_scene(radiance=(2.0, 1.0, 0.5))
    cfg = RenderConfig(envmap_stride=8, envmap_shape=(4, 8), envmap_spp=1_000_000,
                       seed=3, max_bounces=0)
    direct, combined, frames, meta = rl.render_perpixel_envmaps(scene, 0, cfg)
    # one grid cell (8x8 image, stride 8)
    assert direct.shape == (4, 8, 3)
    for c, l0 in enumerate((2.0, 1.0, 0.5)):
        rel = np.abs(direct[:, :, c] - l0) / l0
        assert rel.max() < 0.02, f"channel {c}: worst {rel.max():.4f}"
    assert np.allclose(combined, direct)  # max_bounces=0: no indirect term


def test_envmap_direct_le_combined():
    scene = _cornell_small()
    cfg = RenderConfig(envmap_stride=8, envmap_shape=(4, 8), envmap_spp=40_000, seed=5)
    direct, combined, frames, meta = rl.render_perpixel_envmaps(scene, 0, cfg)
    # indirect adds nonnegative radiance; allow a 3-sigma-ish MC slack
    slack = 0.02 * combined.max() + 1e-9
    assert (direct <= combined + slack).all()
    assert combined.sum() > direct.sum()


def test_envmap_reconstruction_small(cornell_scene):
    """Rendering-equation consistency: sum over texels of f * L * cos * domega
    reproduces the radiance channel at the strided pixels."""
    cam = Camera.looking_at([0.5, 0.12, 0.5], [0.5, 1.0, 0.5], fov_deg=75,
                            width=32, height=32)
    cfg = RenderConfig(spp=1500, seed=4, envmap_stride=16, envmap_shape=(8, 16),
                       envmap_spp=100_000)
    cs = rl.render(cornell_scene, cam, RenderConfig(spp=cfg.spp, seed=4, jitter=False))
    direct, combined, frames, meta = rl.render_perpixel_envmaps(cornell_scene, cam, cfg)
    rec, ref = _reconstruct_vs_radiance(cornell_scene, cam, cs, combined, frames, cfg)
    rel = np.abs(rec - ref).sum(1) / np.maximum(ref.sum(1), 1e-12)
    assert rel.max() < 0.05


def _reconstruct_vs_radiance(scene, cam, cs, combined, frames, cfg):
    from oracles import reference_brdf

    stride = cfg.envmap_stride
    ht, hp = cfg.envmap_shape
    rows = (cam.height + stride - 1) // stride
    cols = (cam.width + stride - 1) // stride
    right, up, fwd = cam.basis()
    tanw, tanh = cam.tan_half()
    rec, ref = [], []
    for gr in range(rows):
        for gc in range(cols):
            py, px = gr * stride, gc * stride
            if cs.instance_mask[py, px] < 0 or cs.light_mask[py, px] >= 0:
                continue
            x = (2.0 * (px + 0.5) / cam.width - 1.0) * tanw
            y = (1.0 - 2.0 * (py + 0.5) / cam.height) * tanh
            d = fwd + x * right + y * up
            d /= np.linalg.norm(d)
            view = -d
            n = frames[gr, gc, 0]
            dirs, domega = envmap_bin_directions(frames, gr, gc, (ht, hp))
            L = combined[gr * ht:(gr + 1) * ht, gc * hp:(gc + 1) * hp]
            albedo = cs.albedo[py, px]
            rough = cs.roughness[py, px]
            nv = max(float(n @ view), 1e-6)
            nl = np.maximum(dirs @ n, 0.0)
            h = dirs + view
            h /= np.linalg.norm(h, axis=-1, keepdims=True)
            nh = np.clip(h @ n, 0.0, 1.0)
            vh = np.clip(h @ view, 0.0, 1.0)
            out = np.zeros(3)
            for c in range(3):
                f = reference_brdf(albedo[c], rough, nv, np.maximum(nl, 1e-12), nh, vh)
                out[c] = (f * L[:, :, c] * nl * domega[:, None]).sum()
            rec.append(out)
            ref.append(cs.radiance[py, px])
    return np.array(rec), np.array(ref)
