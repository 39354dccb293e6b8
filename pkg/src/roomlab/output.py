"""Writing a rendered ChannelSet to disk: one PFM per channel plus a JSON
manifest that names every file semantically (downstream tools read the
manifest, never parse file names)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .integrator import ChannelSet
from .pfm import write_pfm, write_ppm_preview


def write_channels(channels: ChannelSet, out_dir, basename: str = "render",
                   preview: bool = False) -> Path:
    """Write all present channels under ``out_dir``; returns the manifest
    path. Deterministic: equal ChannelSets give byte-identical trees."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []

    def emit(name: str, image, kind: str, **extra):
        fname = f"{basename}_{name}.pfm"
        write_pfm(np.asarray(image, dtype=np.float32), out / fname)
        entry = {"name": name, "file": fname, "kind": kind}
        entry.update(extra)
        entries.append(entry)

    if channels.radiance is not None:
        emit("radiance", channels.radiance, "hdr-rgb")
        if preview:
            write_ppm_preview(channels.radiance, out / f"{basename}_preview.ppm")
    if channels.albedo is not None:
        emit("albedo", channels.albedo, "linear-rgb")
    if channels.normal is not None:
        emit("normal", channels.normal, "camera-normal-encoded")
    if channels.depth is not None:
        emit("depth", channels.depth, "planar-depth-m")
    if channels.roughness is not None:
        emit("roughness", channels.roughness, "scalar")
    if channels.instance_mask is not None:
        emit("instance_mask", channels.instance_mask, "id-or-minus1")
    if channels.light_mask is not None:
        emit("light_mask", channels.light_mask, "light-id-or-minus1")
    if channels.per_light_shading is not None:
        for slot, lid in enumerate(channels.light_ids):
            emit(f"light{lid}_shading", channels.per_light_shading[slot],
                 "per-light-direct", light_id=lid, occlusion=True)
            emit(f"light{lid}_shading_noocc", channels.per_light_no_occlusion[slot],
                 "per-light-direct", light_id=lid, occlusion=False)
            emit(f"light{lid}_visibility", channels.visibility[slot],
                 "visibility-ratio", light_id=lid)
    if channels.envmap_direct is not None:
        meta = dict(channels.envmap_meta)
        emit("envmap_direct", channels.envmap_direct, "envmap-grid", **meta)
        emit("envmap_combined", channels.envmap_combined, "envmap-grid", **meta)

    manifest = {
        "width": channels.width,
        "height": channels.height,
        "spp": channels.spp,
        "seed": channels.seed,
        "light_ids": channels.light_ids,
        "channels": entries,
    }
    manifest_path = out / f"{basename}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
