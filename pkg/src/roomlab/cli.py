"""Command-line entry points.

Subcommands: render, channels, select-views, fit-layout, eval-layout,
friction-table, friction-map, export-urdf. Exit codes: 0 success, 1 a
validated input failed (missing file, bad reference, degenerate geometry),
2 usage errors. Identical invocations produce byte-identical outputs; the
OR_THREADS environment variable caps worker threads without affecting them.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomlab",
        description="Physically-based indoor rendering and ground-truth toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_render_args(p, spp_default):
        p.add_argument("--scene", required=True, help="scene JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--camera", type=int, default=0, help="camera index")
        p.add_argument("--spp", type=int, default=spp_default)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--bounces", type=int, default=7)
        p.add_argument("--preview", action="store_true", help="also write a tone-mapped PPM")

    p = sub.add_parser("render", help="radiance + G-buffer channels")
    add_render_args(p, 64)

    p = sub.add_parser("channels", help="full ground-truth stack (per-light, envmaps)")
    add_render_args(p, 64)
    p.add_argument("--envmap-stride", type=int, default=4)
    p.add_argument("--envmap-bins", type=int, nargs=2, default=(8, 16),
                   metavar=("THETA", "PHI"))
    p.add_argument("--envmap-spp", type=int, default=512)
    p.add_argument("--no-envmaps", action="store_true")
    p.add_argument("--no-per-light", action="store_true")

    p = sub.add_parser("select-views", help="rank wall-sampled camera poses")
    p.add_argument("--scene", required=True)
    p.add_argument("--layout", required=True, help="layout JSON with the floor polygon")
    p.add_argument("--out", default="-", help="output JSON path ('-' for stdout)")
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--height", type=float, default=1.5)
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("-k", type=int, default=0, help="keep top k (0 = all)")

    p = sub.add_parser("fit-layout", help="fit a room layout from a point cloud")
    p.add_argument("--cloud", required=True, help="ASCII 'x y z [label]' file")
    p.add_argument("--out", required=True, help="layout JSON output")
    p.add_argument("--cell", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segment-width", type=float, default=0.5)
    p.add_argument("--min-points", type=int, default=20)

    p = sub.add_parser("eval-layout", help="corner/edge precision-recall and IoU")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--scale", type=float, default=25.0, help="pixels per meter")
    p.add_argument("--out", default="-")

    p = sub.add_parser("friction-table", help="build a friction lookup table")
    p.add_argument("--anchors", required=True,
                   help="JSON list of {albedo_gray, roughness, mu, name}")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--disk-resolution", type=int, default=64)

    p = sub.add_parser("friction-map", help="per-pixel friction for a camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True, help="output PFM path")
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--mode", choices=("nearest", "bilinear"), default="nearest")

    p = sub.add_parser("export-urdf", help="single-link URDF with friction")
    p.add_argument("--scene", required=True)
    p.add_argument("--mesh", required=True, help="mesh index or name in the scene")
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True, help="URDF output path")
    return parser


def _cmd_render(args, full_stack: bool) -> int:
    from .integrator import RenderConfig, render
    from .output import write_channels
    from .scene import load_scene

    scene = load_scene(args.scene)
    config = RenderConfig(spp=args.spp, seed=args.seed, max_bounces=args.bounces)
    if full_stack:
        config.per_light = not args.no_per_light
        config.envmaps = not args.no_envmaps
        config.envmap_stride = args.envmap_stride
        config.envmap_shape = tuple(args.envmap_bins)
        config.envmap_spp = args.envmap_spp
    channels = render(scene, args.camera, config)
    manifest = write_channels(channels, args.out, preview=args.preview)
    print(manifest)
    return 0


def _cmd_select_views(args) -> int:
    from .layout import LayoutPolygon
    from .scene import load_scene
    from .viewsel import rank_views, sample_wall_views

    scene = load_scene(args.scene)
    layout = LayoutPolygon.from_json(args.layout)
    cameras = sample_wall_views(layout.vertices, spacing=args.spacing,
                                camera_height=args.height, fov_deg=args.fov)
    if not cameras:
        raise ValueError("no candidate views (spacing longer than every wall?)")
    k = args.k if args.k > 0 else len(cameras)
    ranked = rank_views(scene, cameras, k)
    doc = [
        {
            "position": c.camera.position.tolist(),
            "direction": c.camera.direction.tolist(),
            "up": c.camera.up.tolist(),
            "fov_deg": c.camera.fov_deg,
            "score": c.score,
        }
        for c in ranked
    ]
    text = json.dumps(doc, indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def _cmd_fit_layout(args) -> int:
    from .layout import assign_openings, fit_layout, load_point_cloud

    cloud = load_point_cloud(args.cloud)
    layout = fit_layout(cloud, cell=args.cell, threshold=args.threshold,
                        iterations=args.iterations, seed=args.seed)
    doc = layout.to_json()
    openings = assign_openings(cloud, layout, segment_width=args.segment_width,
                               min_points=args.min_points)
    doc["openings"] = [
        {"wall": o.wall_index, "start": o.start, "end": o.end,
         "type": o.kind, "cad_id": o.cad_id}
        for o in openings
    ]
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(args.out)
    return 0


def _cmd_eval_layout(args) -> int:
    from .layout import LayoutPolygon, eval_layout

    pred = LayoutPolygon.from_json(args.pred)
    gt = LayoutPolygon.from_json(args.gt)
    metrics = eval_layout(pred, gt, pixels_per_meter=args.scale)
    text = json.dumps(metrics.to_json(), indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def _cmd_friction_table(args) -> int:
    import numpy as np

    from .friction import FrictionAnchor, build_friction_table

    spec = json.loads(Path(args.anchors).read_text())
    anchors = [FrictionAnchor(albedo_gray=a["albedo_gray"], roughness=a["roughness"],
                              mu=a["mu"], name=a.get("name", "")) for a in spec]
    axis = np.linspace(0.0, 1.0, args.grid)
    table = build_friction_table(anchors, albedo_axis=axis, roughness_axis=axis,
                                 resolution=args.disk_resolution)
    table.save(args.out)
    print(args.out)
    return 0


def _cmd_friction_map(args) -> int:
    from .friction import FrictionTable, friction_map
    from .pfm import write_pfm
    from .scene import load_scene

    scene = load_scene(args.scene)
    table = FrictionTable.load(args.table)
    mu = friction_map(scene, args.camera, table, mode=args.mode)
    write_pfm(mu.astype("float32"), args.out)
    print(args.out)
    return 0


def _cmd_export_urdf(args) -> int:
    from .friction import FrictionTable, export_urdf
    from .scene import load_scene

    scene = load_scene(args.scene)
    try:
        idx = int(args.mesh)
    except ValueError:
        names = [m.name for m in scene.meshes]
        if args.mesh not in names:
            raise ValueError(f"mesh '{args.mesh}' not in scene (have {names})")
        idx = names.index(args.mesh)
    if not (0 <= idx < len(scene.meshes)):
        raise ValueError(f"mesh index {idx} out of range")
    mesh = scene.meshes[idx]
    material = scene.materials[scene.mesh_material[idx]]
    table = FrictionTable.load(args.table)
    name = mesh.name or f"mesh_{idx}"
    path = export_urdf(mesh, material, args.mass, table, args.out, name=name)
    print(path)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "render":
            args.preview = getattr(args, "preview", False)
            return _cmd_render(args, full_stack=False)
        if args.command == "channels":
            return _cmd_render(args, full_stack=True)
        if args.command == "select-views":
            return _cmd_select_views(args)
        if args.command == "fit-layout":
            return _cmd_fit_layout(args)
        if args.command == "eval-layout":
            return _cmd_eval_layout(args)
        if args.command == "friction-table":
            return _cmd_friction_table(args)
        if args.command == "friction-map":
            return _cmd_friction_map(args)
        if args.command == "export-urdf":
            return _cmd_export_urdf(args)
        raise AssertionError(f"unhandled command {args.command}")
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"roomlab: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # package-defined errors carry good messages
        from .errors import RoomlabError

        if isinstance(exc, RoomlabError):
            print(f"roomlab: error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
