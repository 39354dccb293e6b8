"""Portable FloatMap (PFM) I/O and an 8-bit PPM/PGM preview writer.

PFM is the HDR interchange format for every rendered channel: float32,
trivially bit-exact and dependency free. Header is ``PF`` (3 channels) or
``Pf`` (1 channel), then ``<width> <height>``, then a scale factor whose
sign encodes endianness (negative = little-endian). Pixel rows are stored
bottom to top. ``read_pfm(write_pfm(x)) == x`` bitwise for finite inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_pfm", "write_pfm", "read_ppm", "write_ppm_preview"]


def write_pfm(image: np.ndarray, path) -> None:
    """Write a (H, W) or (H, W, 1|3) float image as little-endian PFM.

    Non-finite samples are rejected rather than silently encoded.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"PFM image must be (H, W) or (H, W, 1|3), got shape {image.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("PFM image must have at least one pixel")
    if not np.isfinite(img).all():
        raise ValueError("PFM image contains non-finite samples")
    h, w, c = img.shape
    header = ("PF" if c == 3 else "Pf") + f"\n{w} {h}\n-1.0\n"
    payload = np.flipud(img).astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(payload)


def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("unexpected end of PFM header")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, (H, W) or (H, W, 3).

    Handles either endianness; rows are returned top to bottom.
    """
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file (magic {magic!r})")
        w = int(_read_token(f))
        h = int(_read_token(f))
        scale = float(_read_token(f))
        if w < 1 or h < 1:
            raise ValueError(f"bad PFM dimensions {w}x{h}")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h * channels), dtype=dtype)
        if data.size != w * h * channels:
            raise ValueError("truncated PFM payload")
    img = data.reshape(h, w, channels)
    img = np.flipud(img).astype(np.float32)
    return img[:, :, 0] if channels == 1 else img


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5), maxval 255, as linear float in [0, 1]."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic not in (b"P6", b"P5"):
            raise ValueError(f"unsupported PNM magic {magic!r} (only binary P5/P6)")
        # '#' comments are legal between header tokens
        tokens = []
        while len(tokens) < 3:
            tok = _read_token(f)
            if tok.startswith(b"#"):
                f.readline()
                continue
            tokens.append(tok)
        w, h, maxval = (int(t) for t in tokens)
        if maxval != 255:
            raise ValueError("only maxval 255 PNM supported")
        c = 3 if magic == b"P6" else 1
        data = np.frombuffer(f.read(w * h * c), dtype=np.uint8)
        if data.size != w * h * c:
            raise ValueError("truncated PNM payload")
    img = data.reshape(h, w, c).astype(np.float32) / 255.0
    return img[:, :, 0] if c == 1 else img


def write_ppm_preview(image: np.ndarray, path, gamma: float = 2.2, exposure: float = 1.0) -> None:
    """Tone map an HDR image (clamp + gamma) and write an 8-bit binary PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    ldr = np.clip(img * exposure, 0.0, 1.0) ** (1.0 / gamma)
    data = (ldr * 255.0 + 0.5).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
