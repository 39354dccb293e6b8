"""roomlab: indoor-scene rendering and ground-truth toolkit.

A physically-based CPU path tracer with multiple importance sampling and a
full ground-truth channel stack (G-buffers, per-light shading, visibility,
per-pixel environment maps), plus the scene-preparation machinery around it:
room layout fitting from point clouds, wall-based view selection, black-body
lamp spectra, and BRDF-to-friction mapping with URDF export.
"""

from .brdf import (
    MicrofacetParams, ShadingFrame, eval_D, eval_F, eval_G1, eval_brdf,
    eval_brdf_batch, sample_uniform_hemisphere, F0_DEFAULT, R_MIN,
)
from .errors import LayoutError, RoomlabError, SceneError
from .geometry import Camera, TriangleMesh, load_obj, make_box_mesh, make_quad_mesh
from .integrator import (
    ChannelSet, RenderConfig, envmap_bin_directions, estimate_direct,
    mis_contribution, render, render_perpixel_envmaps,
)
from .lights import (
    LampLight, LightSample, WindowLight, blackbody_rgb, envmap_through_window,
    pdf_light, sample_light,
)
from .friction import (
    FrictionAnchor, FrictionTable, ReflectanceDisk, build_friction_table,
    disk_descriptor, export_urdf, friction_map, lookup_friction,
    render_reflectance_disk,
)
from .layout import (
    LayoutMetrics, LayoutPolygon, OccupancyGrid, PlacedObject, PointCloud,
    WallSegment, assign_openings, eval_layout, fit_floor_plane, fit_layout,
    load_point_cloud, polygonize_occupancy, project_topdown, resolve_placement,
)
from .output import write_channels
from .pfm import read_pfm, read_ppm, write_pfm, write_ppm_preview
from .scene import Scene, SurfaceHit, SvBrdfMaterial, load_scene, sample_material
from .texture import Texture, load_texture
from .viewsel import (
    ViewCandidate, normal_gradient_sum, rank_views, sample_wall_views, score_view,
)

__version__ = "0.1.0"
