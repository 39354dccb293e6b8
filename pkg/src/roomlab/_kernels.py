"""Compiled rendering kernels.

Everything here is numba-njit over the flattened scene bundle from
:mod:`roomlab._flat`. The code is scalar per ray on purpose: with the
counter-based RNG each (pixel, sample) pair is an independent pure function
of the seed, which is what makes renders bit-identical across thread counts.
The image kernels are ``nogil`` row-range workers; the integrator fans them
out over a thread pool with disjoint row chunks (no shared mutable state, so
the chunking never changes the output). Random dimensions are laid out per
bounce: 0-1 pixel jitter, 2 light selection, 3-5 light surface sample, 6-7
hemisphere direction, 8+3i the per-light channel samples.
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

from .brdf import _brdf_rgb, _hemisphere_dir, _onb
from .rng import counter_rand

# array bundles shared with the scene flattener
Geo = namedtuple("Geo", "v0 e1 e2 n0 n1 n2 uv0 uv1 uv2 tan mat inst light mesh")
Nodes = namedtuple("Nodes", "bmin bmax left right first count order")
Mats = namedtuple("Mats", "alb_tex rough_tex norm_tex alb_const rough_const uv_scale f0")
Tex = namedtuple("Tex", "data off h w c")
Lamps = namedtuple("Lamps", "center half rot emit area light_id blocked")
Wins = namedtuple("Wins", "corner eu ev normal area tex intensity light_id")
FlatScene = namedtuple(
    "FlatScene",
    "geo nodes mats tex lamps wins light_kind light_sub n_lights eps",
)

UNIFORM_PDF = 1.0 / (2.0 * math.pi)

# local random dimensions stay below 2048, so the upper bits of a sample
# index can spill into the dimension field: samples up to 2^21 per pixel
DIM_STRIDE = 2048
MAX_SAMPLES = (1 << 21) - 1


@njit(cache=True, inline="always")
def _rand(seed, pixel, sample, bounce, dim):
    return counter_rand(seed, pixel, sample & 0xFFFF, bounce,
                        dim + DIM_STRIDE * (sample >> 16))


DIM_JITTER = 0
DIM_SEL = 2
DIM_LPOS = 3
DIM_HEMI = 6
DIM_PERLIGHT = 8

# nearest-hit kinds
MISS = 0
HIT_TRI = 1
HIT_LAMP = 2


# ---------------------------------------------------------------------------
# primitive intersections
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z):
    """Moller-Trumbore; returns (t, u, v), t < 0 on miss."""
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True, inline="always")
def _ray_aabb(ox, oy, oz, idx, idy, idz, bminx, bminy, bminz, bmaxx, bmaxy, bmaxz, tmin, tmax):
    t0 = (bminx - ox) * idx
    t1 = (bmaxx - ox) * idx
    if t0 > t1:
        t0, t1 = t1, t0
    lo = t0 if t0 > tmin else tmin
    hi = t1 if t1 < tmax else tmax
    t0 = (bminy - oy) * idy
    t1 = (bmaxy - oy) * idy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    t0 = (bminz - oz) * idz
    t1 = (bmaxz - oz) * idz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    return lo <= hi


BRUTE_FORCE_MAX = 64


@njit(cache=True, error_model="numpy", inline="always")
def _all_tris_nearest(geo, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light):
    best_t = tmax
    best_tri = -1
    best_u = 0.0
    best_v = 0.0
    for tri in range(geo.v0.shape[0]):
        if skip_light >= 0 and geo.light[tri] == skip_light:
            continue
        t, u, v = _ray_tri(
            ox, oy, oz, dx, dy, dz,
            geo.v0[tri, 0], geo.v0[tri, 1], geo.v0[tri, 2],
            geo.e1[tri, 0], geo.e1[tri, 1], geo.e1[tri, 2],
            geo.e2[tri, 0], geo.e2[tri, 1], geo.e2[tri, 2],
        )
        if tmin < t < best_t:
            best_t = t
            best_tri = tri
            best_u = u
            best_v = v
    return best_tri, best_t, best_u, best_v


@njit(cache=True, error_model="numpy", inline="always")
def bvh_nearest(geo, nodes, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light):
    """Nearest triangle hit in (tmin, tmax); triangles linked to light
    ``skip_light`` are transparent. Returns (tri, t, u, v), tri = -1 on miss.

    Scenes at or below BRUTE_FORCE_MAX triangles skip the tree walk: a plain
    sweep is faster there and produces the identical nearest hit."""
    if geo.v0.shape[0] <= BRUTE_FORCE_MAX:
        return _all_tris_nearest(geo, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light)
    idx = 1.0 / dx
    idy = 1.0 / dy
    idz = 1.0 / dz
    best_t = tmax
    best_tri = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(64, dtype=np.int64)
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_aabb(ox, oy, oz, idx, idy, idz,
                         nodes.bmin[node, 0], nodes.bmin[node, 1], nodes.bmin[node, 2],
                         nodes.bmax[node, 0], nodes.bmax[node, 1], nodes.bmax[node, 2],
                         tmin, best_t):
            continue
        cnt = nodes.count[node]
        if cnt > 0:
            first = nodes.first[node]
            for k in range(cnt):
                tri = nodes.order[first + k]
                if skip_light >= 0 and geo.light[tri] == skip_light:
                    continue
                t, u, v = _ray_tri(
                    ox, oy, oz, dx, dy, dz,
                    geo.v0[tri, 0], geo.v0[tri, 1], geo.v0[tri, 2],
                    geo.e1[tri, 0], geo.e1[tri, 1], geo.e1[tri, 2],
                    geo.e2[tri, 0], geo.e2[tri, 1], geo.e2[tri, 2],
                )
                if tmin < t < best_t:
                    best_t = t
                    best_tri = tri
                    best_u = u
                    best_v = v
        elif nodes.left[node] >= 0:
            stack[top] = nodes.left[node]
            top += 1
            stack[top] = nodes.right[node]
            top += 1
    return best_tri, best_t, best_u, best_v


@njit(cache=True, error_model="numpy", inline="always")
def bvh_any(geo, nodes, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light):
    """Any-hit occlusion query over triangles in (tmin, tmax)."""
    if geo.v0.shape[0] <= BRUTE_FORCE_MAX:
        tri, t, u, v = _all_tris_nearest(geo, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light)
        return tri >= 0
    idx = 1.0 / dx
    idy = 1.0 / dy
    idz = 1.0 / dz
    stack = np.empty(64, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_aabb(ox, oy, oz, idx, idy, idz,
                         nodes.bmin[node, 0], nodes.bmin[node, 1], nodes.bmin[node, 2],
                         nodes.bmax[node, 0], nodes.bmax[node, 1], nodes.bmax[node, 2],
                         tmin, tmax):
            continue
        cnt = nodes.count[node]
        if cnt > 0:
            first = nodes.first[node]
            for k in range(cnt):
                tri = nodes.order[first + k]
                if skip_light >= 0 and geo.light[tri] == skip_light:
                    continue
                t, u, v = _ray_tri(
                    ox, oy, oz, dx, dy, dz,
                    geo.v0[tri, 0], geo.v0[tri, 1], geo.v0[tri, 2],
                    geo.e1[tri, 0], geo.e1[tri, 1], geo.e1[tri, 2],
                    geo.e2[tri, 0], geo.e2[tri, 1], geo.e2[tri, 2],
                )
                if tmin < t < tmax:
                    return True
        elif nodes.left[node] >= 0:
            stack[top] = nodes.left[node]
            top += 1
            stack[top] = nodes.right[node]
            top += 1
    return False


# thin wrappers used from Python-level Scene methods
bvh_nearest_py = bvh_nearest
bvh_any_py = bvh_any


# ---------------------------------------------------------------------------
# textures and materials
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def tex_rgb(tex, ti, u, v):
    """Bilinear repeat-wrapped lookup into the packed atlas; single-channel
    textures replicate to gray."""
    h = tex.h[ti]
    w = tex.w[ti]
    c = tex.c[ti]
    off = tex.off[ti]
    x = (u - math.floor(u)) * w - 0.5
    y = (v - math.floor(v)) * h - 0.5
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    fx = x - x0
    fy = y - y0
    ix0 = x0 % w
    ix1 = (x0 + 1) % w
    iy0 = y0 % h
    iy1 = (y0 + 1) % h
    r = 0.0
    g = 0.0
    b = 0.0
    for ch in range(3):
        cc = ch if ch < c else c - 1
        v00 = tex.data[off + (iy0 * w + ix0) * c + cc]
        v01 = tex.data[off + (iy0 * w + ix1) * c + cc]
        v10 = tex.data[off + (iy1 * w + ix0) * c + cc]
        v11 = tex.data[off + (iy1 * w + ix1) * c + cc]
        val = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy
        if ch == 0:
            r = val
        elif ch == 1:
            g = val
        else:
            b = val
    return r, g, b


@njit(cache=True, inline="always")
def mat_lookup(mats, tex, m, u, v):
    """Material parameters at a raw surface UV: (ar, ag, ab, rough, f0)."""
    su = u * mats.uv_scale[m, 0]
    sv = v * mats.uv_scale[m, 1]
    if mats.alb_tex[m] >= 0:
        ar, ag, ab = tex_rgb(tex, mats.alb_tex[m], su, sv)
        ar = min(max(ar, 0.0), 1.0)
        ag = min(max(ag, 0.0), 1.0)
        ab = min(max(ab, 0.0), 1.0)
    else:
        ar = mats.alb_const[m, 0]
        ag = mats.alb_const[m, 1]
        ab = mats.alb_const[m, 2]
    if mats.rough_tex[m] >= 0:
        rr, _, _ = tex_rgb(tex, mats.rough_tex[m], su, sv)
        rough = min(max(rr, 0.0), 1.0)
    else:
        rough = mats.rough_const[m]
    return ar, ag, ab, rough, mats.f0[m]


@njit(cache=True, inline="always")
def surface_attrs(geo, mats, tex, tri, bu, bv, dx, dy, dz):
    """Oriented geometric + shading normals and UV at a triangle hit.

    Both normals are flipped toward the incoming ray (two-sided shading) and
    the normal map, when present, may not flip the shading normal below the
    geometric horizon (clamped to grazing).
    """
    # geometric normal
    gx = geo.e1[tri, 1] * geo.e2[tri, 2] - geo.e1[tri, 2] * geo.e2[tri, 1]
    gy = geo.e1[tri, 2] * geo.e2[tri, 0] - geo.e1[tri, 0] * geo.e2[tri, 2]
    gz = geo.e1[tri, 0] * geo.e2[tri, 1] - geo.e1[tri, 1] * geo.e2[tri, 0]
    gl = math.sqrt(gx * gx + gy * gy + gz * gz)
    if gl > 0.0:
        gx, gy, gz = gx / gl, gy / gl, gz / gl
    if gx * dx + gy * dy + gz * dz > 0.0:
        gx, gy, gz = -gx, -gy, -gz
    w0 = 1.0 - bu - bv
    sx = w0 * geo.n0[tri, 0] + bu * geo.n1[tri, 0] + bv * geo.n2[tri, 0]
    sy = w0 * geo.n0[tri, 1] + bu * geo.n1[tri, 1] + bv * geo.n2[tri, 1]
    sz = w0 * geo.n0[tri, 2] + bu * geo.n1[tri, 2] + bv * geo.n2[tri, 2]
    sl = math.sqrt(sx * sx + sy * sy + sz * sz)
    if sl < 1e-12:
        sx, sy, sz = gx, gy, gz
    else:
        sx, sy, sz = sx / sl, sy / sl, sz / sl
        if sx * gx + sy * gy + sz * gz < 0.0:
            sx, sy, sz = -sx, -sy, -sz
    u = w0 * geo.uv0[tri, 0] + bu * geo.uv1[tri, 0] + bv * geo.uv2[tri, 0]
    v = w0 * geo.uv0[tri, 1] + bu * geo.uv1[tri, 1] + bv * geo.uv2[tri, 1]
    m = geo.mat[tri]
    nt = mats.norm_tex[m]
    if nt >= 0:
        mxr, myr, mzr = tex_rgb(tex, nt, u * mats.uv_scale[m, 0], v * mats.uv_scale[m, 1])
        mx = 2.0 * mxr - 1.0
        my = 2.0 * myr - 1.0
        mz = 2.0 * mzr - 1.0
        # orthonormalize the triangle tangent against the shading normal
        tx, ty, tz = geo.tan[tri, 0], geo.tan[tri, 1], geo.tan[tri, 2]
        d = tx * sx + ty * sy + tz * sz
        tx, ty, tz = tx - d * sx, ty - d * sy, tz - d * sz
        tl = math.sqrt(tx * tx + ty * ty + tz * tz)
        if tl < 1e-9:
            tx, ty, tz, bx_, by_, bz_ = _onb(sx, sy, sz)
        else:
            tx, ty, tz = tx / tl, ty / tl, tz / tl
            bx_ = sy * tz - sz * ty
            by_ = sz * tx - sx * tz
            bz_ = sx * ty - sy * tx
        px = mx * tx + my * bx_ + mz * sx
        py = mx * ty + my * by_ + mz * sy
        pz = mx * tz + my * bz_ + mz * sz
        pl = math.sqrt(px * px + py * py + pz * pz)
        if pl > 1e-9:
            px, py, pz = px / pl, py / pl, pz / pl
            dg = px * gx + py * gy + pz * gz
            if dg < 0.02:
                px += gx * (0.02 - dg)
                py += gy * (0.02 - dg)
                pz += gz * (0.02 - dg)
                pl = math.sqrt(px * px + py * py + pz * pz)
                px, py, pz = px / pl, py / pl, pz / pl
            sx, sy, sz = px, py, pz
    return gx, gy, gz, sx, sy, sz, u, v


surface_attrs_py = surface_attrs


# ---------------------------------------------------------------------------
# analytic lights
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def lamp_entry(lamps, li, ox, oy, oz, dx, dy, dz):
    """Entry distance of a ray into lamp ``li`` plus the entry face axis;
    (-1, -1) on miss. Boxes with one zero extent are handled as rectangles."""
    # into local frame
    rx = ox - lamps.center[li, 0]
    ry = oy - lamps.center[li, 1]
    rz = oz - lamps.center[li, 2]
    lox = lamps.rot[li, 0, 0] * rx + lamps.rot[li, 1, 0] * ry + lamps.rot[li, 2, 0] * rz
    loy = lamps.rot[li, 0, 1] * rx + lamps.rot[li, 1, 1] * ry + lamps.rot[li, 2, 1] * rz
    loz = lamps.rot[li, 0, 2] * rx + lamps.rot[li, 1, 2] * ry + lamps.rot[li, 2, 2] * rz
    ldx = lamps.rot[li, 0, 0] * dx + lamps.rot[li, 1, 0] * dy + lamps.rot[li, 2, 0] * dz
    ldy = lamps.rot[li, 0, 1] * dx + lamps.rot[li, 1, 1] * dy + lamps.rot[li, 2, 1] * dz
    ldz = lamps.rot[li, 0, 2] * dx + lamps.rot[li, 1, 2] * dy + lamps.rot[li, 2, 2] * dz
    hx = lamps.half[li, 0]
    hy = lamps.half[li, 1]
    hz = lamps.half[li, 2]
    # flat box: intersect the plane of the degenerate axis
    flat_axis = -1
    if hx == 0.0:
        flat_axis = 0
    elif hy == 0.0:
        flat_axis = 1
    elif hz == 0.0:
        flat_axis = 2
    if flat_axis >= 0:
        if flat_axis == 0:
            od, dd, h1, h2, o1, o2, d1, d2 = lox, ldx, hy, hz, loy, loz, ldy, ldz
        elif flat_axis == 1:
            od, dd, h1, h2, o1, o2, d1, d2 = loy, ldy, hx, hz, lox, loz, ldx, ldz
        else:
            od, dd, h1, h2, o1, o2, d1, d2 = loz, ldz, hx, hy, lox, loy, ldx, ldy
        if abs(dd) < 1e-14:
            return -1.0, -1
        t = -od / dd
        if t <= 0.0:
            return -1.0, -1
        p1 = o1 + t * d1
        p2 = o2 + t * d2
        if abs(p1) <= h1 + 1e-12 and abs(p2) <= h2 + 1e-12:
            return t, flat_axis
        return -1.0, -1
    t0 = -np.inf
    t1 = np.inf
    axis = -1
    for ax in range(3):
        if ax == 0:
            o, d, h = lox, ldx, hx
        elif ax == 1:
            o, d, h = loy, ldy, hy
        else:
            o, d, h = loz, ldz, hz
        if abs(d) < 1e-14:
            if abs(o) > h:
                return -1.0, -1
            continue
        ta = (-h - o) / d
        tb = (h - o) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
            axis = ax
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return -1.0, -1
    if t0 <= 0.0 or axis < 0:
        return -1.0, -1
    return t0, axis


@njit(cache=True, inline="always")
def lamp_axis_world(lamps, li, ax):
    return lamps.rot[li, 0, ax], lamps.rot[li, 1, ax], lamps.rot[li, 2, ax]


@njit(cache=True, inline="always")
def lamp_visible_area(lamps, li, px, py, pz):
    rx = px - lamps.center[li, 0]
    ry = py - lamps.center[li, 1]
    rz = pz - lamps.center[li, 2]
    total = 0.0
    for ax in range(3):
        axx, axy, axz = lamp_axis_world(lamps, li, ax)
        side = axx * rx + axy * ry + axz * rz
        if lamps.area[li, ax] > 0.0 and abs(side) > lamps.half[li, ax]:
            total += lamps.area[li, ax]
    return total


@njit(cache=True, inline="always")
def sample_lamp(lamps, li, px, py, pz, u0, u1, u2):
    """Uniform-area sample over the faces visible from p; returns
    (dx, dy, dz, dist, pdf_solid_angle)."""
    rx = px - lamps.center[li, 0]
    ry = py - lamps.center[li, 1]
    rz = pz - lamps.center[li, 2]
    total = 0.0
    for ax in range(3):
        axx, axy, axz = lamp_axis_world(lamps, li, ax)
        side = axx * rx + axy * ry + axz * rz
        if lamps.area[li, ax] > 0.0 and abs(side) > lamps.half[li, ax]:
            total += lamps.area[li, ax]
    if total <= 0.0:
        return 0.0, 0.0, 1.0, 0.0, 0.0
    pick = u0 * total
    acc = 0.0
    sel_ax = -1
    sel_sign = 1.0
    for ax in range(3):
        axx, axy, axz = lamp_axis_world(lamps, li, ax)
        side = axx * rx + axy * ry + axz * rz
        if lamps.area[li, ax] > 0.0 and abs(side) > lamps.half[li, ax]:
            acc += lamps.area[li, ax]
            sel_ax = ax
            sel_sign = 1.0 if side > 0.0 else -1.0
            if pick <= acc:
                break
    o1 = (sel_ax + 1) % 3
    o2 = (sel_ax + 2) % 3
    c0 = sel_sign * lamps.half[li, sel_ax]
    c1 = (2.0 * u1 - 1.0) * lamps.half[li, o1]
    c2 = (2.0 * u2 - 1.0) * lamps.half[li, o2]
    lx = 0.0
    ly = 0.0
    lz = 0.0
    if sel_ax == 0:
        lx, ly, lz = c0, c1, c2
    elif sel_ax == 1:
        ly, lz, lx = c0, c1, c2
    else:
        lz, lx, ly = c0, c1, c2
    wx = lamps.center[li, 0] + lamps.rot[li, 0, 0] * lx + lamps.rot[li, 0, 1] * ly + lamps.rot[li, 0, 2] * lz
    wy = lamps.center[li, 1] + lamps.rot[li, 1, 0] * lx + lamps.rot[li, 1, 1] * ly + lamps.rot[li, 1, 2] * lz
    wz = lamps.center[li, 2] + lamps.rot[li, 2, 0] * lx + lamps.rot[li, 2, 1] * ly + lamps.rot[li, 2, 2] * lz
    tox = wx - px
    toy = wy - py
    toz = wz - pz
    dist = math.sqrt(tox * tox + toy * toy + toz * toz)
    if dist < 1e-12:
        return 0.0, 0.0, 1.0, 0.0, 0.0
    dx = tox / dist
    dy = toy / dist
    dz = toz / dist
    axx, axy, axz = lamp_axis_world(lamps, li, sel_ax)
    cos_l = abs(dx * axx + dy * axy + dz * axz)
    if cos_l < 1e-12:
        return dx, dy, dz, dist, 0.0
    return dx, dy, dz, dist, dist * dist / (total * cos_l)


@njit(cache=True, inline="always")
def pdf_lamp(lamps, li, px, py, pz, dx, dy, dz):
    """Solid-angle pdf sample_lamp assigns to direction (dx,dy,dz); 0 on miss."""
    total = lamp_visible_area(lamps, li, px, py, pz)
    if total <= 0.0:
        return 0.0
    t, axis = lamp_entry(lamps, li, px, py, pz, dx, dy, dz)
    if t <= 0.0 or axis < 0:
        return 0.0
    axx, axy, axz = lamp_axis_world(lamps, li, axis)
    cos_l = abs(dx * axx + dy * axy + dz * axz)
    if cos_l < 1e-12:
        return 0.0
    return t * t / (total * cos_l)


@njit(cache=True, inline="always")
def rect_cross(wins, wi, ox, oy, oz, dx, dy, dz):
    """Distance at which a ray crosses window rectangle ``wi``; -1 if none."""
    nx = wins.normal[wi, 0]
    ny = wins.normal[wi, 1]
    nz = wins.normal[wi, 2]
    denom = dx * nx + dy * ny + dz * nz
    if abs(denom) < 1e-14:
        return -1.0
    t = ((wins.corner[wi, 0] - ox) * nx + (wins.corner[wi, 1] - oy) * ny + (wins.corner[wi, 2] - oz) * nz) / denom
    if t <= 1e-12:
        return -1.0
    hx = ox + t * dx - wins.corner[wi, 0]
    hy = oy + t * dy - wins.corner[wi, 1]
    hz = oz + t * dz - wins.corner[wi, 2]
    eux = wins.eu[wi, 0]
    euy = wins.eu[wi, 1]
    euz = wins.eu[wi, 2]
    evx = wins.ev[wi, 0]
    evy = wins.ev[wi, 1]
    evz = wins.ev[wi, 2]
    a = (hx * eux + hy * euy + hz * euz) / (eux * eux + euy * euy + euz * euz)
    b = (hx * evx + hy * evy + hz * evz) / (evx * evx + evy * evy + evz * evz)
    if -1e-9 <= a <= 1.0 + 1e-9 and -1e-9 <= b <= 1.0 + 1e-9:
        return t
    return -1.0


@njit(cache=True, inline="always")
def env_radiance(tex, wins, wi, dx, dy, dz):
    """Environment radiance along a direction for window ``wi`` (anchored at
    the window center, so only the direction matters)."""
    ti = wins.tex[wi]
    phi = math.atan2(dy, dx)
    ct = dz
    if ct > 1.0:
        ct = 1.0
    elif ct < -1.0:
        ct = -1.0
    theta = math.acos(ct)
    u = (phi + math.pi) / (2.0 * math.pi)
    v = theta / math.pi
    r, g, b = tex_rgb(tex, ti, u, v)
    s = wins.intensity[wi]
    return r * s, g * s, b * s


@njit(cache=True, inline="always")
def sample_window(tex, wins, wi, px, py, pz, u0, u1):
    """Uniform-area rectangle sample: (dx,dy,dz, dist, pdf, Lr,Lg,Lb)."""
    wx = wins.corner[wi, 0] + u0 * wins.eu[wi, 0] + u1 * wins.ev[wi, 0]
    wy = wins.corner[wi, 1] + u0 * wins.eu[wi, 1] + u1 * wins.ev[wi, 1]
    wz = wins.corner[wi, 2] + u0 * wins.eu[wi, 2] + u1 * wins.ev[wi, 2]
    tox = wx - px
    toy = wy - py
    toz = wz - pz
    dist = math.sqrt(tox * tox + toy * toy + toz * toz)
    if dist < 1e-12:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0
    dx = tox / dist
    dy = toy / dist
    dz = toz / dist
    cos_l = abs(dx * wins.normal[wi, 0] + dy * wins.normal[wi, 1] + dz * wins.normal[wi, 2])
    if cos_l < 1e-12:
        return dx, dy, dz, dist, 0.0, 0.0, 0.0, 0.0
    pdf = dist * dist / (wins.area[wi] * cos_l)
    lr, lg, lb = env_radiance(tex, wins, wi, dx, dy, dz)
    return dx, dy, dz, dist, pdf, lr, lg, lb


@njit(cache=True, inline="always")
def pdf_window(wins, wi, px, py, pz, dx, dy, dz):
    t = rect_cross(wins, wi, px, py, pz, dx, dy, dz)
    if t <= 0.0:
        return 0.0
    cos_l = abs(dx * wins.normal[wi, 0] + dy * wins.normal[wi, 1] + dz * wins.normal[wi, 2])
    if cos_l < 1e-12:
        return 0.0
    return t * t / (wins.area[wi] * cos_l)


# ---------------------------------------------------------------------------
# scene-level queries
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def nearest_hit(flat, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light):
    """Nearest among mesh triangles and opaque lamp boxes.

    Returns (kind, index, t, bu, bv): kind 0 = miss, 1 = triangle (index is
    the triangle id), 2 = lamp (index is the lamp slot).
    """
    tri, t, bu, bv = bvh_nearest(flat.geo, flat.nodes, ox, oy, oz, dx, dy, dz, tmin, tmax, skip_light)
    kind = MISS
    idx = -1
    best = tmax
    if tri >= 0:
        kind = HIT_TRI
        idx = tri
        best = t
    for li in range(flat.lamps.center.shape[0]):
        if not flat.lamps.blocked[li]:
            continue
        if skip_light >= 0 and flat.lamps.light_id[li] == skip_light:
            continue
        lt, axis = lamp_entry(flat.lamps, li, ox, oy, oz, dx, dy, dz)
        if lt > tmin and lt < best:
            kind = HIT_LAMP
            idx = li
            best = lt
            bu = 0.0
            bv = 0.0
    return kind, idx, best, bu, bv


@njit(cache=True, inline="always")
def shadow_blocked(flat, px, py, pz, dx, dy, dz, dist, skip_light):
    """Occlusion along a light segment: meshes (triangles linked to the
    target light excluded) plus opaque lamp boxes other than the target."""
    eps = flat.eps
    tmax = dist - eps
    if tmax <= eps:
        return False
    if bvh_any(flat.geo, flat.nodes, px, py, pz, dx, dy, dz, eps, tmax, skip_light):
        return True
    for li in range(flat.lamps.center.shape[0]):
        if not flat.lamps.blocked[li]:
            continue
        if skip_light >= 0 and flat.lamps.light_id[li] == skip_light:
            continue
        lt, axis = lamp_entry(flat.lamps, li, px, py, pz, dx, dy, dz)
        if eps < lt < tmax:
            return True
    return False


@njit(cache=True, inline="always")
def light_mixture_pdf(flat, lid, px, py, pz, dx, dy, dz, inv_n):
    """(1/n_active) * pdf of light ``lid`` along a direction."""
    if flat.light_kind[lid] == 0:
        return inv_n * pdf_lamp(flat.lamps, flat.light_sub[lid], px, py, pz, dx, dy, dz)
    return inv_n * pdf_window(flat.wins, flat.light_sub[lid], px, py, pz, dx, dy, dz)


@njit(cache=True, inline="always")
def power_weight(pa, pb):
    """Power-rule (exponent 2) weight for the strategy with pdf ``pa``."""
    a2 = pa * pa
    return a2 / (a2 + pb * pb)


# ---------------------------------------------------------------------------
# direct lighting
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def nee_light_sample(flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz,
                     ar, ag, ab, rough, f0,
                     u_sel, u0, u1, u2, lfilter):
    """One light-strategy sample, MIS-weighted against the hemisphere pdf.

    Returns (with_r, with_g, with_b, wo_r, wo_g, wo_b): the same sample
    scored with and without the occlusion test.
    """
    n_lights = flat.n_lights
    if n_lights == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if lfilter >= 0:
        lid = lfilter
        inv_n = 1.0
    else:
        lid = int(u_sel * n_lights)
        if lid >= n_lights:
            lid = n_lights - 1
        inv_n = 1.0 / n_lights
    if flat.light_kind[lid] == 0:
        li = flat.light_sub[lid]
        dx, dy, dz, dist, pdf = sample_lamp(flat.lamps, li, px, py, pz, u0, u1, u2)
        lr = flat.lamps.emit[li, 0]
        lg = flat.lamps.emit[li, 1]
        lb = flat.lamps.emit[li, 2]
    else:
        wi = flat.light_sub[lid]
        dx, dy, dz, dist, pdf, lr, lg, lb = sample_window(flat.tex, flat.wins, wi, px, py, pz, u0, u1)
    if pdf <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    cos_s = dx * nsx + dy * nsy + dz * nsz
    if cos_s <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    fr, fg, fb = _brdf_rgb(ar, ag, ab, rough, f0, nsx, nsy, nsz, vx, vy, vz, dx, dy, dz)
    if fr == 0.0 and fg == 0.0 and fb == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    p_l = inv_n * pdf
    w = power_weight(p_l, UNIFORM_PDF)
    scale = w * cos_s / p_l
    wo_r = scale * fr * lr
    wo_g = scale * fg * lg
    wo_b = scale * fb * lb
    if shadow_blocked(flat, px, py, pz, dx, dy, dz, dist, lid):
        return 0.0, 0.0, 0.0, wo_r, wo_g, wo_b
    return wo_r, wo_g, wo_b, wo_r, wo_g, wo_b


@njit(cache=True, inline="always")
def hemi_direct(flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz,
                ar, ag, ab, rough, f0, u0, u1, lfilter):
    """One hemisphere-strategy sample scored for direct light only,
    with and without occlusion. Used by estimate_direct and the per-light
    channels; the main path tracer integrates its hemisphere sample into the
    bounce loop instead."""
    n_lights = flat.n_lights
    if n_lights == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    inv_n = 1.0 if lfilter >= 0 else 1.0 / n_lights
    dx, dy, dz = _hemisphere_dir(nsx, nsy, nsz, u0, u1)
    cos_s = dx * nsx + dy * nsy + dz * nsz
    if cos_s <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    fr, fg, fb = _brdf_rgb(ar, ag, ab, rough, f0, nsx, nsy, nsz, vx, vy, vz, dx, dy, dz)
    base = cos_s / UNIFORM_PDF
    # nearest opaque surface along the ray bounds the with-occlusion carry
    kind, idx, t_hit, bu, bv = nearest_hit(flat, px, py, pz, dx, dy, dz, flat.eps, np.inf, -1)
    block_t = t_hit if kind != MISS else np.inf
    wr = 0.0
    wg = 0.0
    wb = 0.0
    or_ = 0.0
    og = 0.0
    ob = 0.0
    for lid in range(n_lights):
        if lfilter >= 0 and lid != lfilter:
            continue
        if flat.light_kind[lid] == 0:
            li = flat.light_sub[lid]
            lt, axis = lamp_entry(flat.lamps, li, px, py, pz, dx, dy, dz)
            if lt <= flat.eps:
                continue
            lr = flat.lamps.emit[li, 0]
            lg = flat.lamps.emit[li, 1]
            lb = flat.lamps.emit[li, 2]
            p_l = inv_n * pdf_lamp(flat.lamps, li, px, py, pz, dx, dy, dz)
        else:
            wi = flat.light_sub[lid]
            lt = rect_cross(flat.wins, wi, px, py, pz, dx, dy, dz)
            if lt <= flat.eps:
                continue
            lr, lg, lb = env_radiance(flat.tex, flat.wins, wi, dx, dy, dz)
            p_l = inv_n * pdf_window(flat.wins, wi, px, py, pz, dx, dy, dz)
        w = power_weight(UNIFORM_PDF, p_l) * base
        cr = w * fr * lr
        cg = w * fg * lg
        cb = w * fb * lb
        or_ += cr
        og += cg
        ob += cb
        visible = False
        if flat.light_kind[lid] == 0:
            li = flat.light_sub[lid]
            if flat.lamps.blocked[li]:
                # opaque lamp: visible iff it is the nearest hit
                visible = kind == HIT_LAMP and idx == li and abs(block_t - lt) < 1e-9
            else:
                # proxy box of a mesh-linked lamp: the linked mesh is the
                # surface; count it when the nearest hit is its own geometry
                visible = (kind == HIT_TRI and flat.geo.light[idx] == lid) or lt < block_t
        else:
            visible = lt < block_t
        if visible:
            wr += cr
            wg += cg
            wb += cb
    return wr, wg, wb, or_, og, ob


@njit(cache=True)
def estimate_direct_once(flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz,
                         ar, ag, ab, rough, f0,
                         u_sel, u0, u1, u2, u3, u4, occlusion, lfilter):
    """One two-strategy direct-light estimate at a shading point."""
    lw0, lw1, lw2, lo0, lo1, lo2 = nee_light_sample(
        flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz, ar, ag, ab, rough, f0,
        u_sel, u0, u1, u2, lfilter)
    hw0, hw1, hw2, ho0, ho1, ho2 = hemi_direct(
        flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz, ar, ag, ab, rough, f0,
        u3, u4, lfilter)
    if occlusion:
        return lw0 + hw0, lw1 + hw1, lw2 + hw2
    return lo0 + ho0, lo1 + ho1, lo2 + ho2


# ---------------------------------------------------------------------------
# path tracing
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def escape_radiance(flat, px, py, pz, dx, dy, dz, lfilter):
    """Radiance through window portals for an escaped ray (no MIS weight)."""
    r = 0.0
    g = 0.0
    b = 0.0
    for wi in range(flat.wins.corner.shape[0]):
        lid = flat.wins.light_id[wi]
        if lfilter >= 0 and lid != lfilter:
            continue
        t = rect_cross(flat.wins, wi, px, py, pz, dx, dy, dz)
        if t > 0.0:
            er, eg, eb = env_radiance(flat.tex, flat.wins, wi, dx, dy, dz)
            r += er
            g += eg
            b += eb
    return r, g, b


@njit(cache=True)
def radiance_after_hit(flat, seed, pixel, sample,
                       px, py, pz, nsx, nsy, nsz, gx, gy, gz, vx, vy, vz,
                       ar, ag, ab, rough, f0,
                       k_start, k_max, lfilter, occlusion):
    """Radiance leaving a surface vertex toward the viewer, estimated with
    next-event estimation plus a MIS-weighted hemisphere continuation at each
    bounce k = k_start .. k_max (random dimensions are drawn per bounce)."""
    out_r = 0.0
    out_g = 0.0
    out_b = 0.0
    beta_r = 1.0
    beta_g = 1.0
    beta_b = 1.0
    inv_n = 1.0 if lfilter >= 0 else (1.0 / flat.n_lights if flat.n_lights > 0 else 0.0)
    k = k_start
    while k <= k_max:
        # --- light strategy at this vertex
        if flat.n_lights > 0:
            u_sel = _rand(seed, pixel, sample, k, DIM_SEL)
            u0 = _rand(seed, pixel, sample, k, DIM_LPOS)
            u1 = _rand(seed, pixel, sample, k, DIM_LPOS + 1)
            u2 = _rand(seed, pixel, sample, k, DIM_LPOS + 2)
            cw0, cw1, cw2, co0, co1, co2 = nee_light_sample(
                flat, px, py, pz, nsx, nsy, nsz, vx, vy, vz,
                ar, ag, ab, rough, f0, u_sel, u0, u1, u2, lfilter)
            if occlusion:
                out_r += beta_r * cw0
                out_g += beta_g * cw1
                out_b += beta_b * cw2
            else:
                out_r += beta_r * co0
                out_g += beta_g * co1
                out_b += beta_b * co2
        # --- hemisphere continuation
        h0 = _rand(seed, pixel, sample, k, DIM_HEMI)
        h1 = _rand(seed, pixel, sample, k, DIM_HEMI + 1)
        dx, dy, dz = _hemisphere_dir(nsx, nsy, nsz, h0, h1)
        cos_s = dx * nsx + dy * nsy + dz * nsz
        if cos_s <= 0.0:
            break
        fr, fg, fb = _brdf_rgb(ar, ag, ab, rough, f0, nsx, nsy, nsz, vx, vy, vz, dx, dy, dz)
        if fr == 0.0 and fg == 0.0 and fb == 0.0:
            break
        carry = cos_s / UNIFORM_PDF
        tr = beta_r * fr * carry
        tg = beta_g * fg * carry
        tb = beta_b * fb * carry
        kind, idx, t_hit, bu, bv = nearest_hit(flat, px, py, pz, dx, dy, dz, flat.eps, np.inf, -1)
        if kind == MISS:
            for wi in range(flat.wins.corner.shape[0]):
                lid = flat.wins.light_id[wi]
                if lfilter >= 0 and lid != lfilter:
                    continue
                t = rect_cross(flat.wins, wi, px, py, pz, dx, dy, dz)
                if t > 0.0:
                    p_l = inv_n * pdf_window(flat.wins, wi, px, py, pz, dx, dy, dz)
                    w = power_weight(UNIFORM_PDF, p_l)
                    er, eg, eb = env_radiance(flat.tex, flat.wins, wi, dx, dy, dz)
                    out_r += tr * w * er
                    out_g += tg * w * eg
                    out_b += tb * w * eb
            break
        if kind == HIT_LAMP:
            lid = flat.lamps.light_id[idx]
            if lfilter < 0 or lid == lfilter:
                p_l = inv_n * pdf_lamp(flat.lamps, idx, px, py, pz, dx, dy, dz)
                w = power_weight(UNIFORM_PDF, p_l)
                out_r += tr * w * flat.lamps.emit[idx, 0]
                out_g += tg * w * flat.lamps.emit[idx, 1]
                out_b += tb * w * flat.lamps.emit[idx, 2]
            break
        # triangle
        linked = flat.geo.light[idx]
        if linked >= 0:
            if lfilter < 0 or linked == lfilter:
                li = flat.light_sub[linked]
                p_l = inv_n * pdf_lamp(flat.lamps, li, px, py, pz, dx, dy, dz)
                w = power_weight(UNIFORM_PDF, p_l)
                out_r += tr * w * flat.lamps.emit[li, 0]
                out_g += tg * w * flat.lamps.emit[li, 1]
                out_b += tb * w * flat.lamps.emit[li, 2]
            break
        if k == k_max:
            break
        # scatter onward
        ngx, ngy, ngz, nsx2, nsy2, nsz2, u, v = surface_attrs(
            flat.geo, flat.mats, flat.tex, idx, bu, bv, dx, dy, dz)
        m = flat.geo.mat[idx]
        ar, ag, ab, rough, f0 = mat_lookup(flat.mats, flat.tex, m, u, v)
        px = px + t_hit * dx
        py = py + t_hit * dy
        pz = pz + t_hit * dz
        vx, vy, vz = -dx, -dy, -dz
        nsx, nsy, nsz = nsx2, nsy2, nsz2
        gx, gy, gz = ngx, ngy, ngz
        beta_r, beta_g, beta_b = tr, tg, tb
        k += 1
    return out_r, out_g, out_b


@njit(cache=True, inline="always")
def camera_ray(cam, W, H, fx, fy):
    """Primary ray direction for fractional pixel coordinates (fx, fy)."""
    x = 2.0 * fx / W - 1.0
    y = 1.0 - 2.0 * fy / H
    dx = cam[6] + x * cam[9] * cam[0] + y * cam[10] * cam[3]
    dy = cam[7] + x * cam[9] * cam[1] + y * cam[10] * cam[4]
    dz = cam[8] + x * cam[9] * cam[2] + y * cam[10] * cam[5]
    inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
    return dx * inv, dy * inv, dz * inv


@njit(cache=True)
def trace_pixel_sample(flat, cam, W, H, seed, pixel, sample, k_max, lfilter, occlusion, jitter):
    """Full radiance estimate of one pixel sample (jittered or center-ray)."""
    px = pixel % W
    py = pixel // W
    if jitter:
        jx = _rand(seed, pixel, sample, 0, DIM_JITTER)
        jy = _rand(seed, pixel, sample, 0, DIM_JITTER + 1)
    else:
        jx = 0.5
        jy = 0.5
    dx, dy, dz = camera_ray(cam, W, H, px + jx, py + jy)
    ox = cam[11]
    oy = cam[12]
    oz = cam[13]
    kind, idx, t_hit, bu, bv = nearest_hit(flat, ox, oy, oz, dx, dy, dz, 1e-9, np.inf, -1)
    if kind == MISS:
        return escape_radiance(flat, ox, oy, oz, dx, dy, dz, lfilter)
    if kind == HIT_LAMP:
        lid = flat.lamps.light_id[idx]
        if lfilter < 0 or lid == lfilter:
            return flat.lamps.emit[idx, 0], flat.lamps.emit[idx, 1], flat.lamps.emit[idx, 2]
        return 0.0, 0.0, 0.0
    linked = flat.geo.light[idx]
    if linked >= 0:
        if lfilter < 0 or linked == lfilter:
            li = flat.light_sub[linked]
            return flat.lamps.emit[li, 0], flat.lamps.emit[li, 1], flat.lamps.emit[li, 2]
        return 0.0, 0.0, 0.0
    if k_max < 1:
        return 0.0, 0.0, 0.0
    gx, gy, gz, sx, sy, sz, u, v = surface_attrs(
        flat.geo, flat.mats, flat.tex, idx, bu, bv, dx, dy, dz)
    m = flat.geo.mat[idx]
    ar, ag, ab, rough, f0 = mat_lookup(flat.mats, flat.tex, m, u, v)
    hx = ox + t_hit * dx
    hy = oy + t_hit * dy
    hz = oz + t_hit * dz
    if occlusion:
        return radiance_after_hit(
            flat, seed, pixel, sample, hx, hy, hz, sx, sy, sz, gx, gy, gz,
            -dx, -dy, -dz, ar, ag, ab, rough, f0, 1, k_max, lfilter, True)
    # without the visibility term only direct shading is meaningful: score
    # both strategies geometrically against the light surfaces
    u_sel = _rand(seed, pixel, sample, 1, DIM_SEL)
    u0 = _rand(seed, pixel, sample, 1, DIM_LPOS)
    u1 = _rand(seed, pixel, sample, 1, DIM_LPOS + 1)
    u2 = _rand(seed, pixel, sample, 1, DIM_LPOS + 2)
    h0 = _rand(seed, pixel, sample, 1, DIM_HEMI)
    h1 = _rand(seed, pixel, sample, 1, DIM_HEMI + 1)
    lw0, lw1, lw2, lo0, lo1, lo2 = nee_light_sample(
        flat, hx, hy, hz, sx, sy, sz, -dx, -dy, -dz,
        ar, ag, ab, rough, f0, u_sel, u0, u1, u2, lfilter)
    hw0, hw1, hw2, ho0, ho1, ho2 = hemi_direct(
        flat, hx, hy, hz, sx, sy, sz, -dx, -dy, -dz,
        ar, ag, ab, rough, f0, h0, h1, lfilter)
    return lo0 + ho0, lo1 + ho1, lo2 + ho2


@njit(cache=True, nogil=True)
def render_radiance(flat, cam, W, H, row0, row1, spp, seed, k_max, lfilter,
                    occlusion, jitter, want_var, out, out_m2):
    for pixel in range(row0 * W, row1 * W):
        px = pixel % W
        py = pixel // W
        acc_r = 0.0
        acc_g = 0.0
        acc_b = 0.0
        m2_r = 0.0
        m2_g = 0.0
        m2_b = 0.0
        for s in range(spp):
            r, g, b = trace_pixel_sample(flat, cam, W, H, seed, pixel, s, k_max,
                                         lfilter, occlusion, jitter)
            acc_r += r
            acc_g += g
            acc_b += b
            if want_var:
                m2_r += r * r
                m2_g += g * g
                m2_b += b * b
        inv = 1.0 / spp
        out[py, px, 0] = acc_r * inv
        out[py, px, 1] = acc_g * inv
        out[py, px, 2] = acc_b * inv
        if want_var:
            out_m2[py, px, 0] = m2_r * inv
            out_m2[py, px, 1] = m2_g * inv
            out_m2[py, px, 2] = m2_b * inv


@njit(cache=True, nogil=True)
def render_per_light(flat, cam, W, H, row0, row1, spp, seed, jitter, want_var,
                     out_w, out_wo, out_w_m2):
    """Per-light direct shading at the first surface hit, with and without
    the occlusion term, sharing every random decision between the two."""
    n_lights = flat.n_lights
    for pixel in range(row0 * W, row1 * W):
        px = pixel % W
        py = pixel // W
        acc_w = np.zeros((n_lights, 3))
        acc_wo = np.zeros((n_lights, 3))
        acc_m2 = np.zeros((n_lights, 3))
        for s in range(spp):
            if jitter:
                jx = _rand(seed, pixel, s, 0, DIM_JITTER)
                jy = _rand(seed, pixel, s, 0, DIM_JITTER + 1)
            else:
                jx = 0.5
                jy = 0.5
            dx, dy, dz = camera_ray(cam, W, H, px + jx, py + jy)
            ox = cam[11]
            oy = cam[12]
            oz = cam[13]
            kind, idx, t_hit, bu, bv = nearest_hit(flat, ox, oy, oz, dx, dy, dz, 1e-9, np.inf, -1)
            if kind != HIT_TRI or flat.geo.light[idx] >= 0:
                continue
            gx, gy, gz, sx, sy, sz, u, v = surface_attrs(
                flat.geo, flat.mats, flat.tex, idx, bu, bv, dx, dy, dz)
            m = flat.geo.mat[idx]
            ar, ag, ab, rough, f0 = mat_lookup(flat.mats, flat.tex, m, u, v)
            hx = ox + t_hit * dx
            hy = oy + t_hit * dy
            hz = oz + t_hit * dz
            vx, vy, vz = -dx, -dy, -dz
            h0 = _rand(seed, pixel, s, 1, DIM_HEMI)
            h1 = _rand(seed, pixel, s, 1, DIM_HEMI + 1)
            for lid in range(n_lights):
                u0 = _rand(seed, pixel, s, 1, DIM_PERLIGHT + 3 * lid)
                u1 = _rand(seed, pixel, s, 1, DIM_PERLIGHT + 3 * lid + 1)
                u2 = _rand(seed, pixel, s, 1, DIM_PERLIGHT + 3 * lid + 2)
                lw0, lw1, lw2, lo0, lo1, lo2 = nee_light_sample(
                    flat, hx, hy, hz, sx, sy, sz, vx, vy, vz,
                    ar, ag, ab, rough, f0, 0.0, u0, u1, u2, lid)
                hw0, hw1, hw2, ho0, ho1, ho2 = hemi_direct(
                    flat, hx, hy, hz, sx, sy, sz, vx, vy, vz,
                    ar, ag, ab, rough, f0, h0, h1, lid)
                sw0 = lw0 + hw0
                sw1 = lw1 + hw1
                sw2 = lw2 + hw2
                acc_w[lid, 0] += sw0
                acc_w[lid, 1] += sw1
                acc_w[lid, 2] += sw2
                acc_wo[lid, 0] += lo0 + ho0
                acc_wo[lid, 1] += lo1 + ho1
                acc_wo[lid, 2] += lo2 + ho2
                if want_var:
                    acc_m2[lid, 0] += sw0 * sw0
                    acc_m2[lid, 1] += sw1 * sw1
                    acc_m2[lid, 2] += sw2 * sw2
        inv = 1.0 / spp
        for lid in range(n_lights):
            for c in range(3):
                out_w[lid, py, px, c] = acc_w[lid, c] * inv
                out_wo[lid, py, px, c] = acc_wo[lid, c] * inv
                if want_var:
                    out_w_m2[lid, py, px, c] = acc_m2[lid, c] * inv


@njit(cache=True, nogil=True)
def render_gbuffer(flat, cam, W, H, row0, row1, out_albedo, out_normal,
                   out_depth, out_rough, out_inst, out_lmask):
    """Deterministic center-ray G-buffer: albedo, camera-space normal
    (encoded (n+1)/2), planar depth, roughness, instance and light masks."""
    for pixel in range(row0 * W, row1 * W):
        px = pixel % W
        py = pixel // W
        dx, dy, dz = camera_ray(cam, W, H, px + 0.5, py + 0.5)
        ox = cam[11]
        oy = cam[12]
        oz = cam[13]
        out_inst[py, px] = -1.0
        out_lmask[py, px] = -1.0
        kind, idx, t_hit, bu, bv = nearest_hit(flat, ox, oy, oz, dx, dy, dz, 1e-9, np.inf, -1)
        if kind == MISS:
            best_t = np.inf
            best_w = -1
            for wi in range(flat.wins.corner.shape[0]):
                t = rect_cross(flat.wins, wi, ox, oy, oz, dx, dy, dz)
                if 0.0 < t < best_t:
                    best_t = t
                    best_w = wi
            if best_w >= 0:
                out_lmask[py, px] = flat.wins.light_id[best_w]
            out_normal[py, px, 0] = 0.5
            out_normal[py, px, 1] = 0.5
            out_normal[py, px, 2] = 0.5
            continue
        nx = 0.0
        ny = 0.0
        nz = 0.0
        if kind == HIT_LAMP:
            lt, axis = lamp_entry(flat.lamps, idx, ox, oy, oz, dx, dy, dz)
            axx, axy, axz = lamp_axis_world(flat.lamps, idx, axis)
            nx, ny, nz = axx, axy, axz
            if nx * dx + ny * dy + nz * dz > 0.0:
                nx, ny, nz = -nx, -ny, -nz
            out_lmask[py, px] = flat.lamps.light_id[idx]
        else:
            gx, gy, gz, sx, sy, sz, u, v = surface_attrs(
                flat.geo, flat.mats, flat.tex, idx, bu, bv, dx, dy, dz)
            nx, ny, nz = sx, sy, sz
            linked = flat.geo.light[idx]
            if linked >= 0:
                out_lmask[py, px] = linked
            else:
                m = flat.geo.mat[idx]
                ar, ag, ab, rough, f0 = mat_lookup(flat.mats, flat.tex, m, u, v)
                out_albedo[py, px, 0] = ar
                out_albedo[py, px, 1] = ag
                out_albedo[py, px, 2] = ab
                out_rough[py, px] = rough
            out_inst[py, px] = flat.geo.inst[idx]
        # camera-space encoding
        cx = nx * cam[0] + ny * cam[1] + nz * cam[2]
        cy = nx * cam[3] + ny * cam[4] + nz * cam[5]
        cz = -(nx * cam[6] + ny * cam[7] + nz * cam[8])
        out_normal[py, px, 0] = 0.5 * (cx + 1.0)
        out_normal[py, px, 1] = 0.5 * (cy + 1.0)
        out_normal[py, px, 2] = 0.5 * (cz + 1.0)
        out_depth[py, px] = t_hit * (dx * cam[6] + dy * cam[7] + dz * cam[8])


@njit(cache=True, nogil=True)
def render_envmaps(flat, cam, W, H, stride, cell0, cell1, n_theta, n_phi, spp,
                   seed, k_max, lfilter, out_direct, out_comb, out_frames):
    """Hemispherical incoming-radiance maps at strided first-hit points.

    Texels live in a deterministic local shading frame (rows = zenith bins,
    row 0 nearest the normal; columns = azimuth). Both sampling strategies
    feed every texel through the power-rule combination; the direct grid
    keeps only radiance arriving straight from emitters. Strided pixels that
    miss all geometry get the deterministic through-window environment.
    """
    rows = (H + stride - 1) // stride
    cols = (W + stride - 1) // stride
    n_lights = flat.n_lights
    inv_n = 1.0 if lfilter >= 0 else (1.0 / n_lights if n_lights > 0 else 0.0)
    for cell in range(cell0, cell1):
        gr = cell // cols
        gc = cell % cols
        py = gr * stride
        px = gc * stride
        pixel = py * W + px
        dx, dy, dz = camera_ray(cam, W, H, px + 0.5, py + 0.5)
        ox = cam[11]
        oy = cam[12]
        oz = cam[13]
        kind, idx, t_hit, bu, bv = nearest_hit(flat, ox, oy, oz, dx, dy, dz, 1e-9, np.inf, -1)
        if kind == MISS or kind == HIT_LAMP or (kind == HIT_TRI and flat.geo.light[idx] >= 0):
            # no local surface: tabulate the escaping environment directly
            nsx, nsy, nsz = -dx, -dy, -dz
            t1x, t1y, t1z, t2x, t2y, t2z = _onb(nsx, nsy, nsz)
            for bi in range(n_theta):
                th = (bi + 0.5) * (0.5 * math.pi) / n_theta
                st = math.sin(th)
                ct = math.cos(th)
                for bj in range(n_phi):
                    ph = (bj + 0.5) * (2.0 * math.pi) / n_phi
                    cp = math.cos(ph)
                    sp = math.sin(ph)
                    ex = st * (cp * t1x + sp * t2x) + ct * nsx
                    ey = st * (cp * t1y + sp * t2y) + ct * nsy
                    ez = st * (cp * t1z + sp * t2z) + ct * nsz
                    if kind == MISS:
                        er, eg, eb = escape_radiance(flat, ox, oy, oz, ex, ey, ez, lfilter)
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 0] = er
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 1] = eg
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 2] = eb
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 0] = er
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 1] = eg
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 2] = eb
            out_frames[gr, gc, 0, 0] = nsx
            out_frames[gr, gc, 0, 1] = nsy
            out_frames[gr, gc, 0, 2] = nsz
            out_frames[gr, gc, 1, 0] = t1x
            out_frames[gr, gc, 1, 1] = t1y
            out_frames[gr, gc, 1, 2] = t1z
            out_frames[gr, gc, 2, 0] = t2x
            out_frames[gr, gc, 2, 1] = t2y
            out_frames[gr, gc, 2, 2] = t2z
            continue
        gx, gy, gz, nsx, nsy, nsz, u, v = surface_attrs(
            flat.geo, flat.mats, flat.tex, idx, bu, bv, dx, dy, dz)
        hx = ox + t_hit * dx
        hy = oy + t_hit * dy
        hz = oz + t_hit * dz
        t1x, t1y, t1z, t2x, t2y, t2z = _onb(nsx, nsy, nsz)
        out_frames[gr, gc, 0, 0] = nsx
        out_frames[gr, gc, 0, 1] = nsy
        out_frames[gr, gc, 0, 2] = nsz
        out_frames[gr, gc, 1, 0] = t1x
        out_frames[gr, gc, 1, 1] = t1y
        out_frames[gr, gc, 1, 2] = t1z
        out_frames[gr, gc, 2, 0] = t2x
        out_frames[gr, gc, 2, 1] = t2y
        out_frames[gr, gc, 2, 2] = t2z
        for s in range(spp):
            # light strategy
            if n_lights > 0:
                u_sel = _rand(seed, pixel, s, 1, DIM_SEL)
                u0 = _rand(seed, pixel, s, 1, DIM_LPOS)
                u1 = _rand(seed, pixel, s, 1, DIM_LPOS + 1)
                u2 = _rand(seed, pixel, s, 1, DIM_LPOS + 2)
                if lfilter >= 0:
                    lid = lfilter
                else:
                    lid = int(u_sel * n_lights)
                    if lid >= n_lights:
                        lid = n_lights - 1
                if flat.light_kind[lid] == 0:
                    li = flat.light_sub[lid]
                    sdx, sdy, sdz, dist, pdf = sample_lamp(flat.lamps, li, hx, hy, hz, u0, u1, u2)
                    lr = flat.lamps.emit[li, 0]
                    lg = flat.lamps.emit[li, 1]
                    lb = flat.lamps.emit[li, 2]
                else:
                    wi = flat.light_sub[lid]
                    sdx, sdy, sdz, dist, pdf, lr, lg, lb = sample_window(
                        flat.tex, flat.wins, wi, hx, hy, hz, u0, u1)
                if pdf > 0.0:
                    cos_s = sdx * nsx + sdy * nsy + sdz * nsz
                    if cos_s > 0.0 and not shadow_blocked(flat, hx, hy, hz, sdx, sdy, sdz, dist, lid):
                        p_l = inv_n * pdf
                        w = power_weight(p_l, UNIFORM_PDF) / p_l
                        bi, bj = _hemi_bin(sdx, sdy, sdz, nsx, nsy, nsz,
                                           t1x, t1y, t1z, t2x, t2y, t2z, n_theta, n_phi)
                        if bi >= 0:
                            out_direct[gr * n_theta + bi, gc * n_phi + bj, 0] += w * lr
                            out_direct[gr * n_theta + bi, gc * n_phi + bj, 1] += w * lg
                            out_direct[gr * n_theta + bi, gc * n_phi + bj, 2] += w * lb
                            out_comb[gr * n_theta + bi, gc * n_phi + bj, 0] += w * lr
                            out_comb[gr * n_theta + bi, gc * n_phi + bj, 1] += w * lg
                            out_comb[gr * n_theta + bi, gc * n_phi + bj, 2] += w * lb
            # hemisphere strategy
            h0 = _rand(seed, pixel, s, 1, DIM_HEMI)
            h1 = _rand(seed, pixel, s, 1, DIM_HEMI + 1)
            edx, edy, edz = _hemisphere_dir(nsx, nsy, nsz, h0, h1)
            bi, bj = _hemi_bin(edx, edy, edz, nsx, nsy, nsz,
                               t1x, t1y, t1z, t2x, t2y, t2z, n_theta, n_phi)
            if bi < 0:
                continue
            kind2, idx2, t2, bu2, bv2 = nearest_hit(flat, hx, hy, hz, edx, edy, edz, flat.eps, np.inf, -1)
            base = 1.0 / UNIFORM_PDF
            if kind2 == MISS:
                for wi in range(flat.wins.corner.shape[0]):
                    lid2 = flat.wins.light_id[wi]
                    if lfilter >= 0 and lid2 != lfilter:
                        continue
                    t = rect_cross(flat.wins, wi, hx, hy, hz, edx, edy, edz)
                    if t > 0.0:
                        p_l = inv_n * pdf_window(flat.wins, wi, hx, hy, hz, edx, edy, edz)
                        w = power_weight(UNIFORM_PDF, p_l) * base
                        er, eg, eb = env_radiance(flat.tex, flat.wins, wi, edx, edy, edz)
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 0] += w * er
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 1] += w * eg
                        out_direct[gr * n_theta + bi, gc * n_phi + bj, 2] += w * eb
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 0] += w * er
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 1] += w * eg
                        out_comb[gr * n_theta + bi, gc * n_phi + bj, 2] += w * eb
                continue
            if kind2 == HIT_LAMP or flat.geo.light[idx2] >= 0:
                if kind2 == HIT_LAMP:
                    lid2 = flat.lamps.light_id[idx2]
                    li2 = idx2
                else:
                    lid2 = flat.geo.light[idx2]
                    li2 = flat.light_sub[lid2]
                if lfilter < 0 or lid2 == lfilter:
                    p_l = inv_n * pdf_lamp(flat.lamps, li2, hx, hy, hz, edx, edy, edz)
                    w = power_weight(UNIFORM_PDF, p_l) * base
                    out_direct[gr * n_theta + bi, gc * n_phi + bj, 0] += w * flat.lamps.emit[li2, 0]
                    out_direct[gr * n_theta + bi, gc * n_phi + bj, 1] += w * flat.lamps.emit[li2, 1]
                    out_direct[gr * n_theta + bi, gc * n_phi + bj, 2] += w * flat.lamps.emit[li2, 2]
                    out_comb[gr * n_theta + bi, gc * n_phi + bj, 0] += w * flat.lamps.emit[li2, 0]
                    out_comb[gr * n_theta + bi, gc * n_phi + bj, 1] += w * flat.lamps.emit[li2, 1]
                    out_comb[gr * n_theta + bi, gc * n_phi + bj, 2] += w * flat.lamps.emit[li2, 2]
                continue
            # indirect: radiance scattered toward us from the hit surface
            g2x, g2y, g2z, s2x, s2y, s2z, u2c, v2c = surface_attrs(
                flat.geo, flat.mats, flat.tex, idx2, bu2, bv2, edx, edy, edz)
            m2 = flat.geo.mat[idx2]
            ar2, ag2, ab2, rough2, f02 = mat_lookup(flat.mats, flat.tex, m2, u2c, v2c)
            # sub-path scatter budget: incoming radiance may carry at most
            # k_max - 1 scatters so that one more scatter at the probe point
            # reaches exactly the camera-path bounce budget
            ir, ig, ib = radiance_after_hit(
                flat, seed, pixel, s,
                hx + t2 * edx, hy + t2 * edy, hz + t2 * edz,
                s2x, s2y, s2z, g2x, g2y, g2z, -edx, -edy, -edz,
                ar2, ag2, ab2, rough2, f02, 2, k_max, lfilter, True)
            out_comb[gr * n_theta + bi, gc * n_phi + bj, 0] += base * ir
            out_comb[gr * n_theta + bi, gc * n_phi + bj, 1] += base * ig
            out_comb[gr * n_theta + bi, gc * n_phi + bj, 2] += base * ib
        # normalize by sample count and per-texel solid angle
        for bi in range(n_theta):
            th0 = bi * (0.5 * math.pi) / n_theta
            th1 = (bi + 1) * (0.5 * math.pi) / n_theta
            domega = (math.cos(th0) - math.cos(th1)) * (2.0 * math.pi / n_phi)
            inv = 1.0 / (spp * domega)
            for bj in range(n_phi):
                for c in range(3):
                    out_direct[gr * n_theta + bi, gc * n_phi + bj, c] *= inv
                    out_comb[gr * n_theta + bi, gc * n_phi + bj, c] *= inv


@njit(cache=True, inline="always")
def _hemi_bin(dx, dy, dz, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z, n_theta, n_phi):
    """Texel indices of a direction in the local frame; (-1, -1) below."""
    ct = dx * nx + dy * ny + dz * nz
    if ct < 0.0:
        return -1, -1
    if ct > 1.0:
        ct = 1.0
    a = dx * t1x + dy * t1y + dz * t1z
    b = dx * t2x + dy * t2y + dz * t2z
    th = math.acos(ct)
    ph = math.atan2(b, a)
    if ph < 0.0:
        ph += 2.0 * math.pi
    bi = int(th / (0.5 * math.pi) * n_theta)
    if bi >= n_theta:
        bi = n_theta - 1
    bj = int(ph / (2.0 * math.pi) * n_phi)
    if bj >= n_phi:
        bj = n_phi - 1
    return bi, bj
