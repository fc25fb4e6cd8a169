"""Monocular visual odometry front end."""

from .geometry import PoseSE3, project, solve_pnp, triangulate
from .odometry import FrameRecord, KeyFrame, VisualOdometry, is_keyframe
from .trajectory import Trajectory, read_tum, write_tum

__all__ = ["PoseSE3", "project", "solve_pnp", "triangulate", "FrameRecord", "KeyFrame",
           "VisualOdometry", "is_keyframe", "Trajectory", "read_tum", "write_tum"]
