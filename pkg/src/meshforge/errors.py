"""Exception types shared across the pipeline.

Errors are grouped by the module that raises them; all derive from
:class:`MeshforgeError` so callers can catch pipeline failures broadly.
"""


class MeshforgeError(Exception):
    """Base class for all errors raised by this package."""


# --- camera / pose solving ---------------------------------------------------

class NonPositiveDepth(MeshforgeError):
    """A point with z <= 0 was passed to the projector."""


class NoConvergence(MeshforgeError):
    """Iterative undistortion failed to reach tolerance within its cap."""


class InsufficientPoints(MeshforgeError):
    """Fewer than four corner correspondences for planar pose solving."""


class DegenerateConfiguration(MeshforgeError):
    """Collinear points, rank-deficient fit, or inconsistent corner data."""


class BehindCamera(MeshforgeError):
    """The solved board pose fails the cheirality test."""


# --- volume fields -----------------------------------------------------------

class EmptyUnion(MeshforgeError):
    """union_field called with no parts."""


class RayMiss(MeshforgeError):
    """A ray cast for a reconstruction-space marker point hit nothing."""


# --- scale estimation --------------------------------------------------------

class EmptyInput(MeshforgeError):
    """estimate_scale called with no point pairs."""


class DegenerateReconPoint(MeshforgeError):
    """A reconstruction-space point too close to the camera origin."""


class NonPositiveScale(MeshforgeError):
    """apply_scale called with scale <= 0."""


# --- registration ------------------------------------------------------------

class InsufficientPairs(MeshforgeError):
    """Fewer than three correspondence pairs for coarse registration."""


class EmptyCloud(MeshforgeError):
    """ICP called with an empty point cloud."""


class NoCorrespondences(MeshforgeError):
    """All nearest-neighbor matches were rejected in an ICP iteration."""


# --- meshing / rendering -----------------------------------------------------

class MissingNormals(MeshforgeError):
    """colorize requires per-vertex normals."""


class MissingColors(MeshforgeError):
    """rasterize requires per-vertex colors."""


class DimensionMismatch(MeshforgeError):
    """Image or mask dimensions do not agree."""


class EmptyMask(MeshforgeError):
    """Comparison mask selects no pixels."""


class AllFramesExcluded(MeshforgeError):
    """Every sampled evaluation frame fell below the coverage threshold."""


# --- files / pipeline --------------------------------------------------------

class FormatError(MeshforgeError):
    """Malformed input file; message names the file and byte offset."""


class StageInputMissing(MeshforgeError):
    """A pipeline stage's declared input file does not exist."""


class ConfigurationError(MeshforgeError):
    """Pipeline configuration is inconsistent or incomplete."""
