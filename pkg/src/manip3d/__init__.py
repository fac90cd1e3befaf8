"""Geometry core for depth-aware object manipulation: 3D translation
previews, manipulation metrics and video pair curation."""

from .errors import *  # noqa: F401,F403
from .geometry import (CameraIntrinsics, CameraModel, CameraPose, PointCloud,
                       displacement, project, project_point, representative_coordinate,
                       scene_diagonal, translate_cloud, unproject, unproject_masked,
                       unproject_pixel, valid_depth)
from .metrics import (BoundingBox, MetricReport, NormalizationSpec, ObjectEvalInput,
                      PenaltyPolicy, RelocationPair, absrel, aggregate, centroid_distance,
                      chamfer, delta_ratio, diou, evaluate_batch, evaluate_object,
                      mask_iou, missing_penalty, ra_dino, silog)
from .pipeline import (DBSCANParams, FrameRecord, PairSelection, dbscan, depth_filter,
                       select_pair, static_clips)
from .preview import (ErasePolicy, ManipulationRequest, PreviewConfig, render_preview,
                      splat)

__version__ = "0.1.0"
