"""Physically grounded false-positive removal for LiDAR car detections.

A predicted box is deleted when the LiDAR saw a return behind the car the box
claims to hold, inside that car's silhouette: a beam cannot pass through a car.
"""

__version__ = "0.1.0"

from .boxes import Detection, Frame, OrientedBox3, box_corners
from .cad import CadModel, align_cad, default_sedan, downsample, load_cad
from .classifier import FilterOutcome, build_silhouette, filter_detections, is_penetrated
from .evaluation import EvalReport, evaluate, iou_3d, iou_bev
from .search_area import box_spherical_extent, crop_search_area

__all__ = [
    "CadModel",
    "Detection",
    "EvalReport",
    "FilterOutcome",
    "Frame",
    "OrientedBox3",
    "align_cad",
    "box_corners",
    "box_spherical_extent",
    "build_silhouette",
    "crop_search_area",
    "default_sedan",
    "downsample",
    "evaluate",
    "filter_detections",
    "iou_3d",
    "iou_bev",
    "is_penetrated",
    "load_cad",
]
