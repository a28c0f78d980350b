"""Desk-scale video-guided trajectory optimization.

Stages: :mod:`imagination` (guidance video), :mod:`perception` (masks,
depth, poses, contacts), :mod:`supervision` (cost terms), :mod:`optimize`
(CMA-ES over waypoints) and :mod:`pipeline` (orchestration).
"""

from .errors import (AllRejected, ConfigurationError, DomainError, NoAffordance, OptimizationFailed, ProtocolError,
                     SimulationDiverged, TrackingLost, TransportError, VideoGuideError)
from .geometry import CameraModel, DepthMap, PointCloud, Pose6D, SegMask, TriMesh, backproject, chamfer, mask_iou
from .sim import SceneConfig, SimState, Trajectory
from .taskfile import Task, load_task

__version__ = "0.1.0"

__all__ = [
    "AllRejected", "CameraModel", "ConfigurationError", "DepthMap", "DomainError", "NoAffordance",
    "OptimizationFailed", "PointCloud", "Pose6D", "ProtocolError", "SceneConfig", "SegMask", "SimState",
    "SimulationDiverged", "Task", "TrackingLost", "TransportError", "TriMesh", "Trajectory", "VideoGuideError",
    "backproject", "chamfer", "load_task", "mask_iou",
]
