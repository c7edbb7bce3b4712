"""Roadside camera and LiDAR late fusion with a constant-velocity Kalman filter.

Submodules: ``frames`` (shared types and CSV I/O), ``camera`` (pixel to ground
localization), ``pointcloud`` (LiDAR detection), ``kalman`` (filtering and
fusion), ``association`` (matching and track ids), ``scenario`` (synthetic
work-zone generator), ``evaluation`` (error metrics), ``pipeline`` and ``cli``.
"""

from .frames import Trajectory, TrajectorySample, WorldPoint

__version__ = "0.1.0"
__all__ = ["Trajectory", "TrajectorySample", "WorldPoint", "__version__"]
