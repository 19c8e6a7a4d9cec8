"""Video-to-mesh desk pipeline: marker-scaled isosurface fragments, merged.

The package turns file-based stand-ins for reconstructed volumes into
metrically scaled, registered, and merged triangle meshes, then scores the
result by rerendering against reference frames.
"""

__version__ = "0.1.0"

from .errors import MeshforgeError
from .fields import (
    AnalyticField,
    GridField,
    PosedScaledField,
    VolumeField,
    gradient,
    ray_march,
    sample_scalar,
    union_field,
)
from .geometry import (
    CameraIntrinsics,
    MarkerSpec,
    Pose,
    marker_corners_3d,
    project,
    solve_marker_pose,
    undistort,
)
from .mesher import (
    MeshingConfig,
    TriangleMesh,
    colorize,
    decimate,
    marching_cubes,
    vertex_normals,
)
from .registration import (
    CorrespondenceSet,
    IcpParams,
    RigidResult,
    align_correspondences,
    icp,
    register_fragments,
)
from .render import Image, MetricsReport, compare, evaluate_against_frames, rasterize
from .scale import (
    MarkerObservation,
    ScaleEstimate,
    apply_scale,
    estimate_scale,
    metric_marker_point,
    recon_marker_point,
)

__all__ = [
    "AnalyticField", "CameraIntrinsics", "CorrespondenceSet", "GridField",
    "IcpParams", "Image", "MarkerObservation", "MarkerSpec", "MeshforgeError",
    "MeshingConfig", "MetricsReport", "Pose", "PosedScaledField", "RigidResult",
    "ScaleEstimate", "TriangleMesh", "VolumeField", "align_correspondences",
    "apply_scale", "colorize", "compare", "decimate", "estimate_scale",
    "evaluate_against_frames", "gradient", "icp", "marching_cubes",
    "marker_corners_3d", "metric_marker_point", "project", "rasterize",
    "ray_march", "recon_marker_point", "register_fragments", "sample_scalar",
    "solve_marker_pose", "undistort", "union_field", "vertex_normals",
]
