"""Image textures with bilinear filtering and repeat addressing.

Sampling uses the half-texel convention: texel (i, j) is centered at
u = (j + 0.5) / w, v = (i + 0.5) / h, with row 0 at v = 0. UVs wrap by
repeat in both axes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SceneError
from .pfm import read_pfm, read_ppm


class Texture:
    """Immutable float32 image, (H, W, C) with C in {1, 3}."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise SceneError(f"texture must be (H, W) or (H, W, 1|3), got {data.shape}")
        if not np.isfinite(data).all():
            raise SceneError("texture contains non-finite samples")
        self.data = data
        self.data.setflags(write=False)

    @property
    def shape(self):
        return self.data.shape

    def sample(self, u, v) -> np.ndarray:
        """Bilinear lookup at (u, v); broadcastable arrays, repeat wrap.

        Returns (..., C) float64.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        h, w, c = self.data.shape
        x = (u - np.floor(u)) * w - 0.5
        y = (v - np.floor(v)) * h - 0.5
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        x0w, x1w = x0 % w, (x0 + 1) % w
        y0w, y1w = y0 % h, (y0 + 1) % h
        d = self.data.astype(np.float64)
        top = d[y0w, x0w] * (1 - fx) + d[y0w, x1w] * fx
        bot = d[y1w, x0w] * (1 - fx) + d[y1w, x1w] * fx
        return top * (1 - fy) + bot * fy


def load_texture(path) -> Texture:
    """Load a PFM / PPM / PGM file as a linear texture."""
    p = Path(path)
    if not p.exists():
        raise SceneError(f"texture file not found: {p}")
    suffix = p.suffix.lower()
    if suffix == ".pfm":
        return Texture(read_pfm(p))
    if suffix in (".ppm", ".pgm", ".pnm"):
        return Texture(read_ppm(p))
    raise SceneError(f"unsupported texture format '{suffix}' (use .pfm/.ppm/.pgm)")
