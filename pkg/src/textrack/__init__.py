"""Online multi-text video tracking with correlation-based recovery of missed detections."""

from .assignment import Assignment, solve_assignment
from .association import (
    DistanceWeights,
    build_distance_matrix,
    embedding_distance,
    fused_distance,
    iou_distance,
    morphological_distance,
)
from .detection import Detection, TextInstance, Trajectory
from .geometry import RotatedRect, intersection_area, iou, quad_to_rotated_rect, rotated_rect_to_quad
from .metrics import GroundTruth, MetricsReport, evaluate
from .tracker import TrackerConfig, TrackingResult, TrajectoryPool, VideoInput, run_video, step

__version__ = "0.1.0"
