"""Simplified microfacet BRDF: GGX-style distribution, spherical-Gaussian
Schlick Fresnel and Smith-Schlick geometry term, plus uniform hemisphere
sampling. The scalar cores are numba-compiled and shared with the render
kernels so there is exactly one copy of the math.

Conventions: all directions unit length and pointing away from the surface;
an evaluation is valid only when both N.v and N.l are positive, otherwise
the BRDF is zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

F0_DEFAULT = 0.05
# roughness floor applied inside eval_brdf: keeps the lobe integrable when a
# material would otherwise be a perfect mirror (the material library has none)
R_MIN = 0.02

__all__ = [
    "MicrofacetParams", "ShadingFrame", "eval_D", "eval_F", "eval_G1",
    "eval_brdf", "eval_brdf_batch", "sample_uniform_hemisphere",
    "F0_DEFAULT", "R_MIN",
]


@dataclass
class MicrofacetParams:
    """Per-shading-point BRDF parameters: linear RGB albedo, scalar roughness."""

    albedo: np.ndarray
    roughness: float
    f0: float = F0_DEFAULT

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if not (0.0 <= self.roughness <= 1.0):
            raise ValueError(f"roughness out of [0,1]: {self.roughness}")
        if ((self.albedo < 0.0) | (self.albedo > 1.0)).any():
            raise ValueError(f"albedo out of [0,1]: {self.albedo}")
        if not (0.0 <= self.f0 <= 1.0):
            raise ValueError(f"f0 out of [0,1]: {self.f0}")


@dataclass
class ShadingFrame:
    """Unit shading normal plus view/light directions; the half vector is
    always recomputed from v + l, never stored."""

    normal: np.ndarray
    view: np.ndarray
    light: np.ndarray

    def __post_init__(self):
        for name in ("normal", "view", "light"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            n = np.linalg.norm(v)
            if n < 1e-12:
                raise ValueError(f"{name} direction is zero")
            setattr(self, name, v / n)

    @property
    def half(self) -> np.ndarray:
        h = self.view + self.light
        n = np.linalg.norm(h)
        return h / n if n > 1e-12 else np.zeros(3)


@njit(cache=True, inline="always")
def _d_term(n_dot_h, roughness):
    r4 = roughness ** 4
    denom = (n_dot_h * n_dot_h) * (r4 - 1.0) + 1.0
    return r4 / (math.pi * denom * denom)


@njit(cache=True, inline="always")
def _f_term(v_dot_h, f0):
    return (1.0 - f0) * 2.0 ** ((-5.55473 * v_dot_h - 6.98316) * v_dot_h) + f0


@njit(cache=True, inline="always")
def _g1_term(n_dot_w, roughness):
    k = (roughness + 1.0) ** 2 / 8.0
    return n_dot_w / (n_dot_w * (1.0 - k) + k)


@njit(cache=True, inline="always")
def _brdf_scalar(albedo, roughness, f0, n_dot_v, n_dot_l, n_dot_h, v_dot_h):
    """Full BRDF for one channel; callers guarantee n_dot_v, n_dot_l > 0.
    f0 == 0 denotes a purely diffuse material (specular lobe disabled)."""
    if f0 == 0.0:
        return albedo / math.pi
    r = max(roughness, R_MIN)
    spec = (
        _d_term(n_dot_h, r)
        * _f_term(v_dot_h, f0)
        * _g1_term(n_dot_v, r)
        * _g1_term(n_dot_l, r)
        / (4.0 * n_dot_l * n_dot_v)
    )
    return albedo / math.pi + spec


@njit(cache=True, inline="always")
def _frame_dots(nx, ny, nz, vx, vy, vz, lx, ly, lz):
    """(n.v, n.l, n.h, v.h) with h = normalize(v + l); n.h/v.h zero if degenerate."""
    n_dot_v = nx * vx + ny * vy + nz * vz
    n_dot_l = nx * lx + ny * ly + nz * lz
    hx, hy, hz = vx + lx, vy + ly, vz + lz
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    if hn < 1e-12:
        return n_dot_v, n_dot_l, 0.0, 0.0
    hx, hy, hz = hx / hn, hy / hn, hz / hn
    n_dot_h = min(max(nx * hx + ny * hy + nz * hz, 0.0), 1.0)
    v_dot_h = min(max(vx * hx + vy * hy + vz * hz, 0.0), 1.0)
    return n_dot_v, n_dot_l, n_dot_h, v_dot_h


@njit(cache=True, inline="always")
def _brdf_rgb(ar, ag, ab, roughness, f0, nx, ny, nz, vx, vy, vz, lx, ly, lz):
    n_dot_v, n_dot_l, n_dot_h, v_dot_h = _frame_dots(nx, ny, nz, vx, vy, vz, lx, ly, lz)
    if n_dot_v <= 0.0 or n_dot_l <= 0.0 or (n_dot_h == 0.0 and v_dot_h == 0.0):
        return 0.0, 0.0, 0.0
    spec = 0.0
    if f0 > 0.0:
        r = max(roughness, R_MIN)
        spec = (
            _d_term(n_dot_h, r)
            * _f_term(v_dot_h, f0)
            * _g1_term(n_dot_v, r)
            * _g1_term(n_dot_l, r)
            / (4.0 * n_dot_l * n_dot_v)
        )
    inv_pi = 1.0 / math.pi
    return ar * inv_pi + spec, ag * inv_pi + spec, ab * inv_pi + spec


def eval_D(n_dot_h: float, roughness: float) -> float:
    """Microfacet distribution. The R = 0, n.h = 1 point is a Dirac; we
    return 0 there and warn (rendering paths clamp roughness instead)."""
    if not (0.0 <= n_dot_h <= 1.0):
        raise ValueError(f"n_dot_h out of [0,1]: {n_dot_h}")
    if not (0.0 <= roughness <= 1.0):
        raise ValueError(f"roughness out of [0,1]: {roughness}")
    if roughness == 0.0:
        if n_dot_h == 1.0:
            warnings.warn("eval_D singular at roughness=0, n_dot_h=1; returning 0",
                          RuntimeWarning, stacklevel=2)
        return 0.0
    return float(_d_term(n_dot_h, roughness))


def eval_F(v_dot_h: float, f0: float = F0_DEFAULT) -> float:
    """Spherical-Gaussian Schlick Fresnel; lies in [f0, 1]."""
    if not (0.0 <= v_dot_h <= 1.0):
        raise ValueError(f"v_dot_h out of [0,1]: {v_dot_h}")
    return float(_f_term(v_dot_h, f0))


def eval_G1(n_dot_w: float, roughness: float) -> float:
    """One-direction Smith-Schlick shadowing term, k = (R+1)^2 / 8."""
    if not (0.0 <= n_dot_w <= 1.0):
        raise ValueError(f"n_dot_w out of [0,1]: {n_dot_w}")
    if n_dot_w == 0.0:
        return 0.0
    return float(_g1_term(n_dot_w, roughness))


def eval_brdf(params: MicrofacetParams, frame: ShadingFrame) -> np.ndarray:
    """Diffuse + specular BRDF value per channel (1/sr). Zero for invalid
    frames (either N.v or N.l nonpositive)."""
    n, v, l = frame.normal, frame.view, frame.light
    r, g, b = _brdf_rgb(
        params.albedo[0], params.albedo[1], params.albedo[2],
        params.roughness, params.f0,
        n[0], n[1], n[2], v[0], v[1], v[2], l[0], l[1], l[2],
    )
    return np.array([r, g, b])


def eval_brdf_batch(albedo, roughness, normal, view, light, f0: float = F0_DEFAULT) -> np.ndarray:
    """Vectorized BRDF over broadcastable stacks of directions.

    ``albedo`` is (..., 3); ``roughness`` scalar or (...,); directions are
    (..., 3). Returns (..., 3). Invalid frames evaluate to zero.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    v = np.asarray(view, dtype=np.float64)
    l = np.asarray(light, dtype=np.float64)
    rough = np.maximum(np.asarray(roughness, dtype=np.float64), R_MIN)
    n_dot_v = (n * v).sum(-1)
    n_dot_l = (n * l).sum(-1)
    h = v + l
    h_norm = np.linalg.norm(h, axis=-1, keepdims=True)
    h = np.divide(h, h_norm, out=np.zeros_like(h), where=h_norm > 1e-12)
    n_dot_h = np.clip((n * h).sum(-1), 0.0, 1.0)
    v_dot_h = np.clip((v * h).sum(-1), 0.0, 1.0)
    r4 = rough ** 4
    dd = (n_dot_h ** 2) * (r4 - 1.0) + 1.0
    d_term = r4 / (np.pi * dd * dd)
    f_term = (1.0 - f0) * 2.0 ** ((-5.55473 * v_dot_h - 6.98316) * v_dot_h) + f0
    k = (rough + 1.0) ** 2 / 8.0
    safe_nv = np.maximum(n_dot_v, 1e-300)
    safe_nl = np.maximum(n_dot_l, 1e-300)
    g_term = (safe_nv / (safe_nv * (1 - k) + k)) * (safe_nl / (safe_nl * (1 - k) + k))
    with np.errstate(over="ignore", invalid="ignore"):
        spec = d_term * f_term * g_term / (4.0 * safe_nl * safe_nv)
    if f0 == 0.0:
        spec = np.zeros_like(spec)
    out = albedo / np.pi + spec[..., None]
    valid = (n_dot_v > 0.0) & (n_dot_l > 0.0) & (h_norm[..., 0] > 1e-12)
    return np.where(valid[..., None], out, 0.0)


@njit(cache=True, inline="always")
def _onb(nx, ny, nz):
    """Deterministic orthonormal tangent pair for a unit normal."""
    if abs(nx) > 0.9:
        tx, ty, tz = 0.0, 1.0, 0.0
    else:
        tx, ty, tz = 1.0, 0.0, 0.0
    # t := normalize(t - (t.n) n)
    d = tx * nx + ty * ny + tz * nz
    tx, ty, tz = tx - d * nx, ty - d * ny, tz - d * nz
    inv = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz)
    tx, ty, tz = tx * inv, ty * inv, tz * inv
    bx = ny * tz - nz * ty
    by = nz * tx - nx * tz
    bz = nx * ty - ny * tx
    return tx, ty, tz, bx, by, bz


@njit(cache=True, inline="always")
def _hemisphere_dir(nx, ny, nz, u1, u2):
    """Uniform direction on the hemisphere around n; pdf is 1/(2 pi)."""
    cos_t = u1
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u2
    tx, ty, tz, bx, by, bz = _onb(nx, ny, nz)
    cp, sp = math.cos(phi), math.sin(phi)
    dx = sin_t * (cp * tx + sp * bx) + cos_t * nx
    dy = sin_t * (cp * ty + sp * by) + cos_t * ny
    dz = sin_t * (cp * tz + sp * bz) + cos_t * nz
    return dx, dy, dz


UNIFORM_HEMISPHERE_PDF = 1.0 / (2.0 * math.pi)


def sample_uniform_hemisphere(normal, u) -> tuple[np.ndarray, float]:
    """Map two uniforms to a direction on the hemisphere around ``normal``;
    returns (direction, pdf) with pdf exactly 1/(2 pi)."""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    n = n / np.linalg.norm(n)
    u1, u2 = float(u[0]), float(u[1])
    dx, dy, dz = _hemisphere_dir(n[0], n[1], n[2], u1, u2)
    return np.array([dx, dy, dz]), UNIFORM_HEMISPHERE_PDF
