"""Light sources: window portals with environment maps, box area lamps with
black-body spectra, sampling and solid-angle pdfs for the two-strategy
estimator.

A window is a rectangle (corner + two edge vectors) acting as a portal: the
environment map is anchored at the window center, so the radiance carried
through the portal depends only on the ray direction. A lamp is an oriented
box emitting its black-body color uniformly from every face, double sided.
All pdfs returned here are per steradian as seen from the shading point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError
from .texture import Texture

LAMP_TEMP_RANGE = (4000.0, 8000.0)
BLACKBODY_TEMP_RANGE = (1000.0, 20000.0)

__all__ = [
    "WindowLight", "LampLight", "LightSample", "blackbody_rgb",
    "sample_light", "pdf_light", "envmap_through_window",
]


# ---------------------------------------------------------------------------
# black-body spectra
# ---------------------------------------------------------------------------

# CIE 1931 2-degree color matching functions as sums of piecewise Gaussians
# (Wyman, Sloan & Shirley 2013): (scale, mean nm, sigma below, sigma above).
_CMF_FIT = {
    "x": ((1.056, 599.8, 37.9, 31.0), (0.362, 442.0, 16.0, 26.7), (-0.065, 501.1, 20.4, 26.2)),
    "y": ((0.821, 568.8, 46.9, 40.5), (0.286, 530.9, 16.3, 31.1)),
    "z": ((1.217, 437.0, 11.8, 36.0), (0.681, 459.0, 26.0, 13.8)),
}

# linear sRGB primaries, D65 white
_XYZ_TO_RGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)

_HC_OVER_K = 1.4387768775039337e-2  # m K
_WAVELENGTHS_NM = np.arange(380.0, 780.0 + 1e-9, 5.0)


def cie_cmf(wavelength_nm) -> np.ndarray:
    """Approximate CIE 1931 2-degree x/y/z bar functions, shape (..., 3)."""
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    out = np.zeros(lam.shape + (3,))
    for ci, chan in enumerate("xyz"):
        acc = np.zeros_like(lam)
        for scale, mean, s_lo, s_hi in _CMF_FIT[chan]:
            sigma = np.where(lam < mean, s_lo, s_hi)
            acc = acc + scale * np.exp(-0.5 * ((lam - mean) / sigma) ** 2)
        out[..., ci] = acc
    return out


def planck_spectrum(wavelength_nm, temperature: float) -> np.ndarray:
    """Spectral radiance of a black body, arbitrary scale (normalized later)."""
    lam = np.asarray(wavelength_nm, dtype=np.float64) * 1e-9
    return 1.0 / (lam ** 5 * np.expm1(_HC_OVER_K / (lam * temperature)))


def blackbody_rgb(temperature: float) -> np.ndarray:
    """Black-body color as linear sRGB, negatives clamped, max channel = 1.

    Planck's law is integrated against the CIE matching functions on a 5 nm
    grid over 380-780 nm, then projected to linear sRGB.
    """
    lo, hi = BLACKBODY_TEMP_RANGE
    if not (lo <= temperature <= hi):
        raise ValueError(f"temperature {temperature} K outside [{lo}, {hi}] K")
    spectrum = planck_spectrum(_WAVELENGTHS_NM, temperature)
    xyz = (spectrum[:, None] * cie_cmf(_WAVELENGTHS_NM)).sum(axis=0)
    rgb = np.maximum(_XYZ_TO_RGB @ xyz, 0.0)
    peak = rgb.max()
    if peak <= 0.0:
        raise ValueError(f"degenerate spectrum at {temperature} K")
    return rgb / peak


# ---------------------------------------------------------------------------
# light source types
# ---------------------------------------------------------------------------


@dataclass
class WindowLight:
    """Portal rectangle with an equirectangular HDR environment behind it."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    envmap: Texture
    intensity: float = 1.0

    def __post_init__(self):
        self.corner = np.asarray(self.corner, dtype=np.float64).reshape(3)
        self.edge_u = np.asarray(self.edge_u, dtype=np.float64).reshape(3)
        self.edge_v = np.asarray(self.edge_v, dtype=np.float64).reshape(3)
        if self.intensity < 0.0:
            raise SceneError("window intensity must be >= 0")
        cross = np.cross(self.edge_u, self.edge_v)
        area = np.linalg.norm(cross)
        if area < 1e-12:
            raise SceneError("window edge vectors are zero or parallel")
        self._normal = cross / area
        self._area = float(area)

    @property
    def normal(self) -> np.ndarray:
        return self._normal

    @property
    def area(self) -> float:
        return self._area

    @property
    def center(self) -> np.ndarray:
        return self.corner + 0.5 * (self.edge_u + self.edge_v)

    def radiance(self, direction) -> np.ndarray:
        """Environment radiance along a (unit) ray direction, anchored at the
        window center: independent of where the rectangle was crossed."""
        d = np.asarray(direction, dtype=np.float64)
        u, v = equirect_uv(d)
        rgb = self.envmap.sample(u, v)
        if rgb.shape[-1] == 1:
            rgb = np.repeat(rgb, 3, axis=-1)
        return rgb * self.intensity


@dataclass
class LampLight:
    """Box area light; spectrum from black-body temperature, double sided."""

    center: np.ndarray
    half_extents: np.ndarray
    temperature: float
    intensity: float = 1.0
    yaw_deg: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if (self.half_extents < 0.0).any() or self.half_extents.max() <= 0.0:
            raise SceneError("lamp half extents must be >= 0 with positive max")
        lo, hi = LAMP_TEMP_RANGE
        if not (lo <= self.temperature <= hi):
            raise SceneError(f"lamp temperature {self.temperature} K outside [{lo}, {hi}] K")
        if self.intensity < 0.0:
            raise SceneError("lamp intensity must be >= 0")

    @property
    def rotation(self) -> np.ndarray:
        yaw = math.radians(self.yaw_deg)
        c, s = math.cos(yaw), math.sin(yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def emission(self) -> np.ndarray:
        """Emitted radiance (RGB), constant over the surface."""
        return blackbody_rgb(self.temperature) * self.intensity

    def face_areas(self) -> np.ndarray:
        h = self.half_extents
        return 4.0 * np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])


@dataclass
class LightSample:
    """One light-strategy sample: direction from the shading point, distance
    to the sampled light surface, carried radiance and solid-angle pdf."""

    direction: np.ndarray
    distance: float
    radiance: np.ndarray
    pdf: float
    light_id: int = -1


def equirect_uv(direction) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular mapping with +z up: u from azimuth, v from polar angle
    (v = 0 at +z)."""
    d = np.asarray(direction, dtype=np.float64)
    phi = np.arctan2(d[..., 1], d[..., 0])
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    return (phi + np.pi) / (2.0 * np.pi), theta / np.pi


# ---------------------------------------------------------------------------
# sampling / pdf (reference numpy path; the compiled kernels mirror these)
# ---------------------------------------------------------------------------


def _ray_rect(corner, eu, ev, normal, origin, direction):
    """Parametric distance where the ray crosses the rectangle, or -1."""
    denom = float(np.dot(direction, normal))
    if abs(denom) < 1e-12:
        return -1.0
    t = float(np.dot(corner - origin, normal)) / denom
    if t <= 1e-12:
        return -1.0
    p = origin + t * np.asarray(direction, dtype=np.float64)
    rel = p - corner
    uu = np.dot(eu, eu)
    vv = np.dot(ev, ev)
    a = float(np.dot(rel, eu) / uu)
    b = float(np.dot(rel, ev) / vv)
    if -1e-9 <= a <= 1.0 + 1e-9 and -1e-9 <= b <= 1.0 + 1e-9:
        return t
    return -1.0


def _lamp_bundle(lamp: LampLight):
    """One-lamp array bundle for the compiled helpers, cached on the lamp so
    the Python API and the render kernels share identical geometry code."""
    bundle = getattr(lamp, "_bundle", None)
    if bundle is None:
        from ._kernels import Lamps

        bundle = Lamps(
            center=lamp.center.reshape(1, 3).copy(),
            half=lamp.half_extents.reshape(1, 3).copy(),
            rot=lamp.rotation.reshape(1, 3, 3).copy(),
            emit=lamp.emission().reshape(1, 3).copy(),
            area=lamp.face_areas().reshape(1, 3).copy(),
            light_id=np.zeros(1, dtype=np.int64),
            blocked=np.ones(1, dtype=np.bool_),
        )
        lamp._bundle = bundle
    return bundle


def sample_light(light, point, u, light_id: int = -1) -> LightSample:
    """Draw one area sample and convert its pdf to solid angle.

    Lamps sample uniformly over the faces visible from the point; windows
    sample the rectangle uniformly. Degenerate geometry (point on the light
    surface) yields a zero-pdf sample.
    """
    point = np.asarray(point, dtype=np.float64).reshape(3)
    u = np.asarray(u, dtype=np.float64).ravel()
    if isinstance(light, WindowLight):
        target = light.corner + u[0] * light.edge_u + u[1] * light.edge_v
        to = target - point
        dist = float(np.linalg.norm(to))
        if dist < 1e-9:
            return LightSample(np.array([0.0, 0.0, 1.0]), 0.0, np.zeros(3), 0.0, light_id)
        direction = to / dist
        cos_l = abs(float(np.dot(direction, light.normal)))
        if cos_l < 1e-9:
            return LightSample(direction, dist, np.zeros(3), 0.0, light_id)
        pdf = dist * dist / (light.area * cos_l)
        return LightSample(direction, dist, light.radiance(direction), pdf, light_id)

    if isinstance(light, LampLight):
        from . import _kernels as K

        dx, dy, dz, dist, pdf = K.sample_lamp(
            _lamp_bundle(light), 0, point[0], point[1], point[2],
            float(u[0]), float(u[1]), float(u[2]))
        direction = np.array([dx, dy, dz])
        if pdf <= 0.0:
            return LightSample(direction, dist, np.zeros(3), 0.0, light_id)
        return LightSample(direction, dist, light.emission(), pdf, light_id)

    raise TypeError(f"unknown light type {type(light)!r}")


def pdf_light(light, point, direction) -> float:
    """Solid-angle pdf that :func:`sample_light` assigns to ``direction``
    from ``point``; 0 when the ray misses the light."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    if isinstance(light, WindowLight):
        t = _ray_rect(light.corner, light.edge_u, light.edge_v, light.normal, point, direction)
        if t <= 0.0:
            return 0.0
        cos_l = abs(float(np.dot(direction, light.normal)))
        if cos_l < 1e-9:
            return 0.0
        return t * t / (light.area * cos_l)
    if isinstance(light, LampLight):
        from . import _kernels as K

        return float(K.pdf_lamp(_lamp_bundle(light), 0, point[0], point[1], point[2],
                                direction[0], direction[1], direction[2]))
    raise TypeError(f"unknown light type {type(light)!r}")


def envmap_through_window(lights, origin, direction, select: int | None = None) -> np.ndarray:
    """Radiance carried by an escaped ray: sum over window lights whose
    rectangle the ray crosses (optionally restricted to one light index)."""
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    total = np.zeros(3)
    for idx, light in enumerate(lights):
        if not isinstance(light, WindowLight):
            continue
        if select is not None and idx != select:
            continue
        t = _ray_rect(light.corner, light.edge_u, light.edge_v, light.normal, origin, direction)
        if t > 0.0:
            total = total + light.radiance(direction)
    return total
