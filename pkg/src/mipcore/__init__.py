"""Multi-angle MIPs with voxel provenance, occlusion correction of projected
tumor annotations, and 2D segmentation metrics."""

__version__ = "0.1.0"

from .errors import FormatError, InvalidParameterError
from .volume import Spacing, SuvParams, Volume3D, VolumeKind, suv_normalize, validate
from .projection import (
    AngularPlan, MipImage, MipStack, ProvenanceMap, angular_plan, mirror, project_labels,
    project_mip, project_stack,
)
from .occlusion import OcclusionConfig, correct_mip, correct_stack, exclusion_stats
from .metrics import classification_metrics, dice, hausdorff, iou
from .phantom import PhantomSpec, SphereSpec, generate
