"""Point-based single-stage 3D object detection with fusion sampling, at desk scale."""

from .boxgeom import iou_3d, nms
from .config import RunConfig, load_config
from .core import Box3D, Detection, Instance, PointCloud, Scene, validate_scene
from .estimator import FusionSampler, SSD3DDetector
from .head import Assignment, centerness, decode_boxes
from .metrics import average_precision, evaluate, nds
from .sampling import SamplingConfig, Strategy, fps, fusion_sample, points_recall

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "Box3D",
    "Detection",
    "FusionSampler",
    "Instance",
    "PointCloud",
    "RunConfig",
    "SSD3DDetector",
    "SamplingConfig",
    "Scene",
    "Strategy",
    "average_precision",
    "centerness",
    "decode_boxes",
    "evaluate",
    "fps",
    "fusion_sample",
    "iou_3d",
    "load_config",
    "nds",
    "nms",
    "points_recall",
    "validate_scene",
]
